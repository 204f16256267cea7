"""Validate esx JSON reports against the bundled schema.

usage: check_schema.py SCHEMA ESX_BINARY CORPUS_DIR
Analyzes every corpus package and validates the emitted report.
"""
import json
import pathlib
import subprocess
import sys

import jsonschema


def main():
    schema_path, esx, corpus = sys.argv[1:4]
    schema = json.loads(pathlib.Path(schema_path).read_text())
    validator = jsonschema.Draft7Validator(schema)
    failures = 0
    packages = sorted(p for p in pathlib.Path(corpus).iterdir() if (p / "manifest.json").exists())
    for pkg in packages:
        run = subprocess.run([esx, "analyze", str(pkg), "--json", "--workers", "1"], capture_output=True, text=True)
        if run.returncode not in (0, 1):
            print(f"FAIL {pkg.name}: exit {run.returncode}: {run.stderr.strip()}")
            failures += 1
            continue
        errors = sorted(validator.iter_errors(json.loads(run.stdout)), key=lambda e: list(e.path))
        for e in errors:
            print(f"FAIL {pkg.name}: {'/'.join(map(str, e.path))}: {e.message}")
        failures += len(errors)
        if not errors:
            print(f"ok   {pkg.name}")
    if not packages:
        print("no packages found")
        failures += 1
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main())
