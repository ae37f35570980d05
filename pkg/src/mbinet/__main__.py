import sys

from mbinet.cli import main

sys.exit(main())
