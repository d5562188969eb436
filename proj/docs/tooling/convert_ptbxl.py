# SPDX-License-Identifier: Apache-2.0
"""Convert a PTB-XL download into the toolkit's manifest format.

Usage:
    python convert_ptbxl.py /path/to/ptb-xl out_dir [--hz {100,500}]

Reads ptbxl_database.csv plus the WFDB records and writes:
    out_dir/manifest.csv     one row per episode
    out_dir/splits.tsv       official strat_fold assignment (folds 1-8 train,
                             9 validation, 10 test)
    out_dir/signals/*.f32    raw little-endian float32, lead-major

Requires pandas and the `wfdb` package. This is a convenience script, not
part of the library contract; reports are written as found in the CSV (run
your own translation first if you need English text).
"""

import argparse
import pathlib
import sys

import numpy as np
import pandas as pd

try:
    import wfdb
except ImportError:
    sys.exit("the wfdb package is required: pip install wfdb")


def quote_report(report: str) -> str:
    return '"' + report.replace('"', '""') + '"'


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("ptbxl_dir", type=pathlib.Path)
    ap.add_argument("out_dir", type=pathlib.Path)
    ap.add_argument("--hz", type=int, default=100, choices=(100, 500))
    args = ap.parse_args()

    db = pd.read_csv(args.ptbxl_dir / "ptbxl_database.csv", index_col="ecg_id")
    rec_col = "filename_lr" if args.hz == 100 else "filename_hr"

    signals_dir = args.out_dir / "signals"
    signals_dir.mkdir(parents=True, exist_ok=True)

    manifest_rows = []
    split_rows = []
    for ecg_id, row in db.iterrows():
        record = wfdb.rdrecord(str(args.ptbxl_dir / row[rec_col]))
        # wfdb yields (samples, leads); manifest wants lead-major
        data = np.ascontiguousarray(record.p_signal.T.astype("<f4"))
        episode_id = f"ptbxl-{ecg_id:05d}"
        rel = f"signals/{episode_id}.f32"
        (args.out_dir / rel).write_bytes(data.tobytes())

        report = str(row.get("report", "") or "").replace("\n", " ").strip()
        rhythm = ""  # single rhythm label: use scp_codes post-processing if needed
        date = str(row.get("recording_date", ""))[:10]
        manifest_rows.append(
            f"{episode_id},{int(row['patient_id'])},{args.hz},{data.shape[0]},"
            f"{data.shape[1]},{rel},{rhythm},{date},{quote_report(report)}"
        )
        fold = int(row["strat_fold"])
        split = "train" if fold <= 8 else ("validation" if fold == 9 else "test")
        split_rows.append(f"{episode_id}\t{split}")

    (args.out_dir / "manifest.csv").write_text("\n".join(manifest_rows) + "\n")
    (args.out_dir / "splits.tsv").write_text("\n".join(split_rows) + "\n")
    print(f"wrote {len(manifest_rows)} episodes to {args.out_dir}")


if __name__ == "__main__":
    main()
