#!/usr/bin/env python3
"""Convert MIT-BIH (WFDB) records to the paired CSV layout `ecgadv prepare` reads.

    pip install wfdb
    python tools/mitdb_to_csv.py /path/to/mitdb /path/to/out [100 101 ...]

Writes <id>.sig.csv (header row of lead names, one sample per line, physical
units) and <id>.ann.csv (sample_index,symbol) for each record.
"""

import argparse
import csv
import pathlib
import sys

try:
    import wfdb
except ImportError:
    sys.exit("mitdb_to_csv: needs the wfdb package (pip install wfdb)")


def convert(src: pathlib.Path, out: pathlib.Path, record_id: str) -> None:
    rec = wfdb.rdrecord(str(src / record_id))
    ann = wfdb.rdann(str(src / record_id), "atr")
    with open(out / f"{record_id}.sig.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(rec.sig_name)
        for row in rec.p_signal:
            w.writerow(f"{v:.6g}" for v in row)
    with open(out / f"{record_id}.ann.csv", "w", newline="") as f:
        w = csv.writer(f)
        for sample, symbol in zip(ann.sample, ann.symbol):
            w.writerow([int(sample), symbol])


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("src", type=pathlib.Path)
    p.add_argument("out", type=pathlib.Path)
    p.add_argument("records", nargs="*", help="record ids (default: every *.hea in src)")
    a = p.parse_args()
    a.out.mkdir(parents=True, exist_ok=True)
    ids = a.records or sorted(h.stem for h in a.src.glob("*.hea"))
    for rid in ids:
        convert(a.src, a.out, rid)
        print(rid)


if __name__ == "__main__":
    main()
