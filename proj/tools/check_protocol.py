"""Validate envelope transcripts (one JSON object per line) against the protocol schema."""

import argparse
import json
import sys

import jsonschema


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("schema")
    parser.add_argument("transcripts", nargs="+")
    args = parser.parse_args()

    with open(args.schema, encoding="utf-8") as f:
        validator = jsonschema.Draft202012Validator(json.load(f))
    failures = 0
    for path in args.transcripts:
        with open(path, encoding="utf-8") as f:
            for number, line in enumerate(f, start=1):
                if not line.strip():
                    continue
                for error in validator.iter_errors(json.loads(line)):
                    print(f"{path}:{number}: {error.message}")
                    failures += 1
    print(f"{len(args.transcripts)} transcript(s), {failures} violation(s)")
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main())
