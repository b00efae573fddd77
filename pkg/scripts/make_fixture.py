"""Regenerate the synthetic contact-list fixture shipped in ``dlsn_smc/data``.

The file mimics the school contact format: tab-separated ``t i j Ci Cj``
lines, timestamps in 20 s steps. Two classes drift on latent AR(1) paths and
contacts are more frequent between nearby students of the same class.
"""

from pathlib import Path

import numpy as np
from scipy.special import expit

OUT = Path(__file__).resolve().parents[1] / "src" / "dlsn_smc" / "data"


def main(seed=2024, hours=2.0, start=31220):
    rng = np.random.default_rng(seed)
    classes = {"1A": [str(1001 + k) for k in range(25)], "1B": [str(1101 + k) for k in range(20)]}
    ids = [n for members in classes.values() for n in members]
    group = {n: g for g, members in classes.items() for n in members}
    n = len(ids)
    slots_per_window = 12
    n_windows = int(hours * 3600 // 240)
    U = rng.normal(scale=0.6, size=(n, 2))
    lines = []
    for w in range(n_windows):
        U = 0.9 * U + 0.25 * rng.normal(size=U.shape)
        for a in range(n):
            for b in range(a + 1, n):
                same = group[ids[a]] == group[ids[b]]
                p = expit(-1.0 - 1.5 * np.linalg.norm(U[a] - U[b])) * 0.5 if same else 0.002
                k = rng.binomial(slots_per_window, p)
                for slot in sorted(rng.choice(slots_per_window, size=k, replace=False)):
                    t = start + 240 * w + 20 * int(slot)
                    i, j = (ids[a], ids[b]) if rng.random() < 0.5 else (ids[b], ids[a])
                    lines.append((t, i, j))
    lines.sort(key=lambda r: r[0])
    OUT.mkdir(parents=True, exist_ok=True)
    with open(OUT / "contacts_fixture.tsv", "w") as fh:
        for t, i, j in lines:
            fh.write(f"{t}\t{i}\t{j}\t{group[i]}\t{group[j]}\n")
    with open(OUT / "metadata_fixture.tsv", "w") as fh:
        for node in ids:
            fh.write(f"{node}\t{group[node]}\n")
    print(f"wrote {len(lines)} contacts for {n} students")


if __name__ == "__main__":
    main()
