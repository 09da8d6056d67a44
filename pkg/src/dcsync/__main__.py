import sys

from dcsync.cli import main

sys.exit(main())
