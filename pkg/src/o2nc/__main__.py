import sys

from o2nc.cli import main

sys.exit(main())
