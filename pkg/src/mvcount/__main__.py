import sys

from mvcount.harness.cli import main

sys.exit(main())
