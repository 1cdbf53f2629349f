import sys

from cwae.cli import main


sys.exit(main())
