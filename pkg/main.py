import sys

from src.search_agent_lab.cli import main

if __name__ == "__main__":
    sys.exit(main())
