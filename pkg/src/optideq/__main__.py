import sys

from optideq.cli import main

sys.exit(main())
