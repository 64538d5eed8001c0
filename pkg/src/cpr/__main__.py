import sys

from cpr.cli import main

sys.exit(main())
