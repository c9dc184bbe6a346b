"""
Script runner shared by the test files, so each one also works as `python test_x.py`.
"""

import math
import traceback
from typing import Callable, List, Tuple


def run_tests(title: str, tests: List[Tuple[str, Callable[[], None]]]) -> int:
    print(f"🧪 {title}")
    print("=" * 60)

    results = []
    for name, test in tests:
        try:
            test()
            print(f"  ✅ {name}")
            results.append((name, True))
        except Exception as e:
            print(f"  ❌ {name}: {type(e).__name__}: {e}")
            traceback.print_exc()
            results.append((name, False))

    print("\n📊 Test Summary")
    print("=" * 60)
    passed = sum(1 for _, ok in results if ok)
    for name, ok in results:
        print(f"  {'✅ PASS' if ok else '❌ FAIL'} {name}")
    print(f"\n🎯 Overall: {passed}/{len(results)} tests passed")
    return 0 if passed == len(results) else 1


def fish_points():
    """Six points carrying one Čech cycle that is invisible to Vietoris-Rips."""
    h = math.sqrt(3) / 2
    return [(-1.5, h), (-1.5, -h), (0.0, 0.0), (1.0, 1.0), (1.0, -1.0), (2.0, 0.0)]
