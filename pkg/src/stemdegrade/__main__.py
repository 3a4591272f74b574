from stemdegrade.cli import main
import sys
sys.exit(main())
