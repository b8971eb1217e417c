"""Regenerate the checked-in desk-scale pipeline fixtures.

Run from the repository root:

    python3 tests/fixtures/make_fixtures.py

Everything is seeded, so reruns reproduce the same bytes. The embeddings
are synthetic (the heavyweight transformer exporter is a separate
component); a weak year effect is planted in the upstream probabilities
so the mixed-model stage has signal to find.
"""

import csv
import json
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[2] / "src"))

from sentitrend.corpus import filter_window, parse_comments  # noqa: E402
from sentitrend.emb_io import write_embeddings  # noqa: E402
from sentitrend.gat import EmbeddingMatrix, GatConfig, init_params  # noqa: E402
from sentitrend.stacking import StackModel  # noqa: E402

HERE = Path(__file__).resolve().parent
SEED = 20190801
N_SCHOOLS = 24
EMB_DIM = 16

REGIONS = ["West", "South", "Northeast", "Midwest"]
CCHIE = ["BaccalaureateOrMasters", "DoctoralHigh", "DoctoralVeryHigh"]


def utc(year, month, day, hour=12):
    return int(datetime(year, month, day, hour, tzinfo=timezone.utc).timestamp())


def make_comments(rng):
    lines = []
    msg_counter = 0
    for s in range(N_SCHOOLS):
        school = f"school{s:02d}"
        for year in (2019, 2020, 2021, 2022):
            thread_roots = []
            n_msgs = int(rng.integers(8, 14))
            for k in range(n_msgs):
                msg_counter += 1
                msg_id = f"m{msg_counter:05d}"
                month = int(rng.choice([8, 9, 10, 11]))
                day = int(rng.integers(1, 28))
                if thread_roots and rng.uniform() < 0.55:
                    parent = str(rng.choice(thread_roots))
                else:
                    parent = None
                thread_roots.append(msg_id)
                body = f"message {msg_counter}"
                if rng.uniform() < 0.03:
                    body = "[deleted]"
                lines.append(json.dumps({
                    "msg_id": msg_id,
                    "school_id": school,
                    "parent_id": parent,
                    "created_utc": utc(year, month, day),
                    "body": body,
                    "author_dummy": int(rng.integers(1, 400)),
                }, separators=(",", ":")))
        # one out-of-window message per school, dropped at ingestion
        msg_counter += 1
        lines.append(json.dumps({
            "msg_id": f"m{msg_counter:05d}",
            "school_id": school,
            "parent_id": None,
            "created_utc": utc(2020, 12, 15),
            "body": "outside window",
            "author_dummy": 7,
        }, separators=(",", ":")))
    return "\n".join(lines) + "\n"


def make_covariates(rng):
    rows = []
    for s in range(N_SCHOOLS):
        school = f"school{s:02d}"
        row = {
            "school_id": school,
            "region": REGIONS[s % 4],
            "type": "Public" if rng.uniform() < 0.6 else "Private",
            "d1": "Yes" if rng.uniform() < 0.8 else "No",
            "cchie": CCHIE[int(rng.integers(0, 3))],
            "medical": "Yes" if rng.uniform() < 0.5 else "No",
            "city_population": round(float(rng.uniform(20, 2000)), 1),
            "doctoral_programs": int(rng.integers(0, 600)),
            "tenure": int(rng.integers(150, 3000)),
            "enrollment": round(float(rng.uniform(2, 90)), 1),
            "graduate_student": round(float(rng.uniform(0.5, 20)), 2),
            "selectivity": round(float(rng.uniform(0.05, 0.95)), 3),
            "graduation_rate": round(float(rng.uniform(20, 95)), 1),
        }
        # one school with a missing cell: excluded from the model stage
        if s == N_SCHOOLS - 1:
            row["graduation_rate"] = ""
        rows.append(row)
    header = ["school_id", "region", "type", "d1", "cchie", "medical",
              "city_population", "doctoral_programs", "tenure", "enrollment",
              "graduate_student", "selectivity", "graduation_rate"]
    out = [",".join(header)]
    for row in rows:
        out.append(",".join(str(row[h]) for h in header))
    return "\n".join(out) + "\n"


def make_coordinates(rng):
    # one school deliberately missing to exercise the figure warning path
    lines = ["school_id,lat,lon"]
    for s in range(N_SCHOOLS - 1):
        lat = round(float(rng.uniform(26, 47)), 4)
        lon = round(float(rng.uniform(-122, -71)), 4)
        lines.append(f"school{s:02d},{lat},{lon}")
    return "\n".join(lines) + "\n"


def main():
    rng = np.random.default_rng(SEED)
    (HERE / "comments.jsonl").write_text(make_comments(rng), encoding="utf-8")
    (HERE / "covariates.csv").write_text(make_covariates(rng), encoding="utf-8")
    (HERE / "coordinates.csv").write_text(make_coordinates(rng), encoding="utf-8")

    comments = parse_comments((HERE / "comments.jsonl").read_text(encoding="utf-8"))
    corpus = filter_window(comments, years={2019, 2020, 2021, 2022}, months={8, 9, 10, 11})
    msg_ids = [m.msg_id for m in corpus.messages]

    values = rng.normal(size=(len(msg_ids), EMB_DIM)).astype(np.float32)
    write_embeddings(HERE / "embeddings.emb",
                     EmbeddingMatrix(values=values, msg_ids=msg_ids))

    config = GatConfig(heads=(2, 1), head_dim=(4, 2))
    params = init_params(config, EMB_DIM, seed=SEED)
    (HERE / "gat_params.json").write_text(params.to_json() + "\n", encoding="utf-8")
    (HERE / "gat_config.json").write_text(json.dumps({
        "heads": [2, 1], "head_dim": [4, 2], "negative_slope": 0.2,
        "direction": "successors"}, sort_keys=True) + "\n", encoding="utf-8")

    model = StackModel(w0=0.1, w1=1.0, w2=1.2, transform="logit", threshold=0.5)
    (HERE / "stack_model.json").write_text(model.to_json() + "\n", encoding="utf-8")

    # Upstream probabilities with a planted year effect (higher negative
    # odds after the baseline year) so the trend stage has signal.
    year_shift = {2019: -0.35, 2020: 0.45, 2021: 0.05, 2022: 0.20}
    rows = ["msg_id,p_negative"]
    for m, year in zip(corpus.messages, corpus.years):
        eta = rng.normal(scale=1.0) + year_shift[year]
        p = 1.0 / (1.0 + np.exp(-eta))
        rows.append(f"{m.msg_id},{p:.6f}")
    (HERE / "upstream.probs.csv").write_text("\n".join(rows) + "\n", encoding="utf-8")

    config_obj = {
        "comments": "tests/fixtures/comments.jsonl",
        "covariates": "tests/fixtures/covariates.csv",
        "coordinates": "tests/fixtures/coordinates.csv",
        "embeddings": "tests/fixtures/embeddings.emb",
        "gat_params": "tests/fixtures/gat_params.json",
        "stack_model": "tests/fixtures/stack_model.json",
        "upstream_probs": "tests/fixtures/upstream.probs.csv",
        "out": "out",
        "years": [2019, 2020, 2021, 2022],
        "months": [8, 9, 10, 11],
        "cap": 30000,
        "seed_batch": 50,
        "rng_seed": SEED,
        "gat": {"heads": [2, 1], "head_dim": [4, 2]},
    }
    (HERE / "pipeline_config.json").write_text(
        json.dumps(config_obj, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    print(f"fixtures written to {HERE} ({len(msg_ids)} in-window messages)")


if __name__ == "__main__":
    main()
