#!/usr/bin/env python3
"""
Test script to verify environment variables and the installed stack.
"""
import importlib
import os
import sys

from dotenv import load_dotenv

from testkit import run_tests

load_dotenv()

# PE_* variables are optional; settings.py falls back to these defaults
OPTIONAL_VARS = {
    "PE_SEED": "master seed for every random stream",
    "PE_WORKERS": "joblib workers for Monte-Carlo batches",
    "PE_OUT_DIR": "directory for CSV/JSON outputs",
    "PE_LOG_LEVEL": "logging level",
    "PE_MC_SAMPLES": "default Monte-Carlo sample count",
}

PACKAGES = [
    ("dotenv", "python-dotenv"),
    ("numpy", "numpy"),
    ("scipy", "scipy"),
    ("joblib", "joblib"),
    ("matplotlib", "matplotlib"),
    ("pytest", "pytest"),
]

MODULES = ["settings", "errors", "artifacts", "geometry", "filtration", "persistence",
           "pointprocess", "regime", "experiments", "lifetime_cli"]


def test_environment():
    print("\n📋 Optional Environment Variables:")
    for var, description in OPTIONAL_VARS.items():
        value = os.getenv(var)
        if value:
            print(f"  ✅ {var}: {value}")
        else:
            print(f"  ⚠️  {var}: Using default - {description}")

    import settings
    assert settings.WORKERS >= 1
    assert settings.MC_SAMPLES > 0
    assert settings.MASTER_SEED >= 0
    assert settings.OUT_DIR


def test_imports():
    missing = []
    for package, pip_name in PACKAGES:
        try:
            importlib.import_module(package)
        except ImportError:
            print(f"  ❌ {package} - Install with: pip install {pip_name}")
            missing.append(package)
    assert not missing, f"missing packages: {missing}"

    import scipy
    from scipy.optimize import isotonic_regression  # noqa: F401  needs scipy >= 1.12
    print(f"  ✅ scipy {scipy.__version__}")


def test_package_modules():
    for name in MODULES:
        importlib.import_module(name)
    import settings
    assert settings.get_version() == settings.__version__


def main():
    return run_tests("Persistent Extremes - Environment Test", [
        ("Environment Variables", test_environment),
        ("Package Imports", test_imports),
        ("Package Modules", test_package_modules),
    ])


if __name__ == "__main__":
    sys.exit(main())
