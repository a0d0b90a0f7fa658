import sys

from robustfair.main import main

sys.exit(main())
