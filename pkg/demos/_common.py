import sys
import tempfile
from pathlib import Path


def out_dir(name):
    """First CLI argument, or a fresh temporary directory."""
    root = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix=f"aarchive_{name}_"))
    root.mkdir(parents=True, exist_ok=True)
    return root
