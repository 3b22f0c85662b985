"""Convert an unpacked PH2 dataset directory into a manifest CSV.

Expected layout (as distributed)::

    PH2Dataset/
      PH2_dataset.txt
      PH2 Dataset images/IMD002/IMD002_Dermoscopic_Image/IMD002.bmp
      PH2 Dataset images/IMD002/IMD002_lesion/IMD002_lesion.bmp

``PH2_dataset.txt`` is a ``||``-delimited table whose columns are name,
histological diagnosis, clinical diagnosis (0 common nevus, 1 atypical
nevus, 2 melanoma), five dermoscopic criteria and finally the colour codes
(1 white, 2 red, 3 light brown, 4 dark brown, 5 blue-gray, 6 black).
"""

from __future__ import annotations

import re
from pathlib import Path

from .errors import ManifestError
from .evaluation import write_manifest

DIAGNOSES = {"0": "common_nevus", "1": "atypical_nevus", "2": "melanoma"}
COLOR_CODES = {"1": "white", "2": "red", "3": "light_brown", "4": "dark_brown",
               "5": "blue_gray", "6": "black"}
_NAME = re.compile(r"^IMD\d+$")


def parse_ph2_table(text):
    """{image name: (diagnosis, colours)} from the text table."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        if "||" not in line:
            continue
        cells = [c.strip() for c in line.split("||")]
        if cells and cells[0] == "":
            cells = cells[1:]
        if cells and cells[-1] == "":
            cells = cells[:-1]
        if not cells or not _NAME.match(cells[0]):
            continue
        if len(cells) < 4:
            raise ManifestError(f"PH2 table line {lineno}: too few columns")
        diag = cells[2]
        if diag not in DIAGNOSES:
            raise ManifestError(f"PH2 table line {lineno}: unknown clinical diagnosis {diag!r}")
        colors = tuple(COLOR_CODES[c] for c in cells[-1].split() if c in COLOR_CODES)
        out[cells[0]] = (DIAGNOSES[diag], colors)
    if not out:
        raise ManifestError("no image rows found in PH2 table")
    return out


def _find(root, pattern):
    hits = sorted(root.rglob(pattern))
    return hits[0] if hits else None


def ph2_rows(root):
    root = Path(root)
    table = _find(root, "PH2_dataset.txt")
    if table is None:
        raise ManifestError(f"PH2_dataset.txt not found under {root}")
    info = parse_ph2_table(table.read_text(errors="replace"))
    rows = []
    for name in sorted(info):
        diag, colors = info[name]
        image = _find(root, f"{name}.bmp")
        if image is None:
            raise ManifestError(f"image for {name} not found under {root}")
        mask = _find(root, f"{name}_lesion.bmp")
        rows.append((image, diag, mask, colors))
    return rows


def make_ph2_manifest(root, out_csv):
    return write_manifest(ph2_rows(root), out_csv)
