import sys

from sarrm.cli import main

sys.exit(main())
