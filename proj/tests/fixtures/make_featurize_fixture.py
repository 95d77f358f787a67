"""Regenerates the featurization fixture and its reference features.

The reference is computed with numpy independently of the C++ code:
per-speaker z-scoring over turn-edge IPUs (population std, zero where the
std vanishes), then mean, median, std, p1, p99 and p99 - p1 per channel.
"""
import json
from pathlib import Path

import numpy as np

HERE = Path(__file__).resolve().parent
CHANNELS = 38
# Speaker pattern: A A A B A B B; the middle A of the first turn is medial.
SPEAKERS = ["A", "A", "A", "B", "A", "B", "B"]


def make_frames(rng):
    ipus = []
    for index, speaker in enumerate(SPEAKERS):
        n_frames = int(rng.integers(1, 9))
        scale = 2.0 if speaker == "A" else 0.5
        frames = rng.normal(1.0, scale, size=(n_frames, CHANNELS))
        frames[:, 5] = 4.0  # constant channel: zero std after pooling
        ipus.append({"session_id": "fx", "task_id": None, "speaker": speaker,
                     "index": index, "lld_frames": frames.round(6).tolist()})
    return ipus


def edge_flags(ipus):
    flags = []
    for i, ipu in enumerate(ipus):
        first = i == 0 or ipus[i - 1]["speaker"] != ipu["speaker"]
        last = i == len(ipus) - 1 or ipus[i + 1]["speaker"] != ipu["speaker"]
        flags.append(first or last)
    return flags


def reference(ipus):
    flags = edge_flags(ipus)
    stats = {}
    for speaker in ("A", "B"):
        pooled = np.vstack([np.array(u["lld_frames"]) for u, f in zip(ipus, flags)
                            if f and u["speaker"] == speaker])
        stats[speaker] = (pooled.mean(axis=0), pooled.std(axis=0))
    out = {}
    for ipu, flag in zip(ipus, flags):
        if not flag:
            continue
        mu, sigma = stats[ipu["speaker"]]
        x = np.array(ipu["lld_frames"])
        z = np.divide(x - mu, sigma, out=np.zeros_like(x), where=sigma > 0)
        p1 = np.percentile(z, 1, axis=0)
        p99 = np.percentile(z, 99, axis=0)
        cols = np.stack([z.mean(axis=0), np.median(z, axis=0), z.std(axis=0), p1, p99, p99 - p1],
                        axis=1)
        out[str(ipu["index"])] = cols.reshape(-1).tolist()
    return out


def main():
    rng = np.random.default_rng(20240601)
    ipus = make_frames(rng)
    with open(HERE / "lld_session.jsonl", "w") as f:
        for ipu in ipus:
            f.write(json.dumps(ipu) + "\n")
    with open(HERE / "lld_expected.json", "w") as f:
        json.dump(reference(ipus), f, indent=1)


if __name__ == "__main__":
    main()
