import sys
import os

sys.path.append(os.path.dirname(os.path.dirname(os.path.dirname(os.path.abspath(__file__)))))

from main import main

CASES = ("funnel", "corridor", "plaza", "crossing")

if __name__ == '__main__':
    case = sys.argv[1] if len(sys.argv) > 1 else "crossing"
    if case not in CASES:
        print(f"unknown case {case!r}; choose one of {', '.join(CASES)}")
        sys.exit(1)
    root = os.path.dirname(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
    sys.exit(main([
        "run",
        "--config", os.path.join(root, "configs", f"{case}.toml"),
        "--scene", os.path.join(root, "scenarios", f"{case}.json"),
        *sys.argv[2:],
    ]))
