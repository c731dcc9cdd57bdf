"""Regenerate the demo case ECG and the remote-tool fixtures (deterministic)."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from cardioagent.tools.ecg import synthetic_ecg, write_ecg_csv
from cardioagent.tools.remote import rle_encode

DEMO = Path(__file__).resolve().parents[1] / "src" / "cardioagent" / "data" / "demo"


def lv_mask(h: int, w: int, ry: float, rx: float) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w]
    return ((yy - h * 0.55) / ry) ** 2 + ((xx - w / 2) / rx) ** 2 <= 1.0


def main() -> None:
    sig = synthetic_ecg(duration_s=10.0, fs=250.0, bpm=96.0, noise_mv=0.02, drift_mv=0.3, offset_mv=0.2, seed=7)
    write_ecg_csv(sig, DEMO / "case_hf" / "ecg.csv")

    h, w = 32, 24
    frames = [
        {"height": h, "width": w, "rle": list(rle_encode(lv_mask(h, w, ry, rx)))}
        for ry, rx in ((12.0, 8.0), (11.2, 7.4), (10.8, 7.1), (11.6, 7.7))
    ]
    fixtures = {
        "view_classifier": {
            "clip_01": {"view": "A4C", "confidence": 0.97},
            "clip_02": {"view": "PSL", "confidence": 0.93},
        },
        "echo_segmenter": {"clip_01": {"structure": "left ventricle", "frames": frames}},
        "diagnosis_model": {"case_hf": {"label": "HF", "probability": 0.91}},
    }
    (DEMO / "remote_fixtures.json").write_text(json.dumps(fixtures, indent=1) + "\n", encoding="utf-8")


if __name__ == "__main__":
    main()
