#!/usr/bin/env python3
"""Rebuild replay/records.jsonl from the fixture design and script.

The recorded hashes must track the exact bytes of the design sources and
of the candidate inside the scripted rewrite reply; rerun this after
touching either. Metric numbers are pinned here on purpose: the loop on
this fixture must land on a 48.0% LUT and 40.0% FF reduction.
"""

import json
from pathlib import Path

from cradle.llm import extract_code_blocks
from cradle.replay import make_record, sim_hash, synth_hash, write_records

HERE = Path(__file__).resolve().parent
DESIGN = HERE / "workspace" / "designs" / "counter8"
REPLAY = HERE / "replay"

REF_CELLS = {"TRELLIS_FF": 8, "LUT4": 4, "CCU2C": 4}
CAND_CELLS = {"TRELLIS_FF": 6, "LUT4": 1, "CCU2C": 4}
REF_PNR = {"LUT": 100, "FF": 10}
CAND_PNR = {"LUT": 52, "FF": 6}


def main():
    src_texts = [p.read_text() for p in sorted((DESIGN / "src").glob("*.v"))]
    tb_texts = [p.read_text() for p in sorted((DESIGN / "tb").glob("*.v"))]

    candidate = None
    for line in (REPLAY / "script.jsonl").read_text().splitlines():
        if not line.strip():
            continue
        blocks = extract_code_blocks(json.loads(line)["reply"], "verilog")
        if blocks:
            candidate = blocks[-1].text
    if candidate is None:
        raise SystemExit("script.jsonl contains no verilog block")

    passed = {"status": "Pass", "log_excerpt": "all tests passed", "matched_rule": None}
    records = [
        make_record("sim", sim_hash(src_texts, tb_texts), passed),
        make_record("synth", synth_hash(src_texts), {"cell_counts": REF_CELLS}),
        make_record("pnr", synth_hash(src_texts), {"counts": REF_PNR}),
        make_record("sim", sim_hash([candidate], tb_texts), passed),
        make_record("synth", synth_hash([candidate]), {"cell_counts": CAND_CELLS}),
        make_record("pnr", synth_hash([candidate]), {"counts": CAND_PNR}),
    ]
    write_records(REPLAY / "records.jsonl", records)
    print(f"wrote {REPLAY / 'records.jsonl'} ({len(records)} records)")


if __name__ == "__main__":
    main()
