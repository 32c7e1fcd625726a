import sys

from bladeinv.cli import main

sys.exit(main())
