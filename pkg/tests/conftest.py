import sys
from pathlib import Path

# Make tests/util.py importable as `util` regardless of invocation directory.
sys.path.insert(0, str(Path(__file__).parent))
