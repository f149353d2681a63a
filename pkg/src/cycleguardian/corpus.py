"""ICBHI-format corpus handling: annotation parsing, cycle extraction,
manifests, and every split regime used by the evaluation harness."""

import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.io import wavfile

LABELS = ("normal", "crackle", "wheeze", "both")
KNOWN_DEVICES = ("Meditron", "LittC2SE", "Litt3200", "AKGC417L")


class CorpusError(Exception):
    """Raised for unreadable, missing, or inconsistent dataset inputs."""


@dataclass(frozen=True)
class RecordingMeta:
    stem: str
    patient_id: int
    rec_index: str
    chest_location: str
    acquisition_mode: str
    device: str


@dataclass(frozen=True)
class CycleRecord:
    cycle_id: str
    wav_path: str
    start_s: float
    end_s: float
    crackle: bool
    wheeze: bool
    label: str
    meta: RecordingMeta
    overlaps_previous: bool = False


def label_of(crackle, wheeze):
    return LABELS[int(bool(crackle)) + 2 * int(bool(wheeze))]


def parse_stem(stem):
    """patient_recindex_location_mode_device; extra underscore fields join
    into the device token."""
    parts = stem.split("_")
    if len(parts) < 5:
        raise CorpusError(f"stem {stem!r} does not have the 5 underscore-separated fields")
    try:
        patient = int(parts[0])
    except ValueError:
        raise CorpusError(f"stem {stem!r}: patient field {parts[0]!r} is not an integer") from None
    device = "_".join(parts[4:])
    if device not in KNOWN_DEVICES:
        warnings.warn(f"stem {stem}: unrecognized device token {device!r}")
    return RecordingMeta(
        stem=stem,
        patient_id=patient,
        rec_index=parts[1],
        chest_location=parts[2],
        acquisition_mode=parts[3],
        device=device,
    )


def parse_annotation_file(path):
    """One cycle per line: start_s end_s crackle_flag wheeze_flag."""
    rows = []
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            fields = line.split()
            if len(fields) != 4:
                raise CorpusError(f"{path}:{lineno}: expected 4 fields, got {len(fields)}")
            try:
                start, end = float(fields[0]), float(fields[1])
                cr, wh = int(fields[2]), int(fields[3])
            except ValueError:
                raise CorpusError(f"{path}:{lineno}: unparseable fields {fields!r}") from None
            if cr not in (0, 1) or wh not in (0, 1):
                raise CorpusError(f"{path}:{lineno}: flags must be 0/1, got {fields[2]} {fields[3]}")
            if end <= start:
                raise CorpusError(f"{path}:{lineno}: end {end} <= start {start}")
            rows.append((start, end, bool(cr), bool(wh)))
    return rows


def read_wav(path):
    """PCM or float WAV -> (rate, float64 mono in [-1, 1])."""
    try:
        rate, data = wavfile.read(path)
    except Exception as e:
        raise CorpusError(f"{path}: unreadable wav: {e}") from None
    if data.ndim > 1:
        data = data[:, 0]
    if data.dtype == np.int16:
        x = data / 32768.0
    elif data.dtype == np.int32:
        x = data / 2147483648.0
    elif data.dtype == np.uint8:
        x = (data.astype(np.float64) - 128.0) / 128.0
    else:
        x = data.astype(np.float64)
    return int(rate), np.asarray(x, dtype=np.float64)


def build_corpus(dataset_dir):
    """Scan paired .wav/.txt files into CycleRecords.

    Returns (cycles, summary). Unpaired files are an error listing the stems.
    """
    root = Path(dataset_dir)
    if not root.is_dir():
        raise CorpusError(f"{dataset_dir}: not a directory")
    wavs = {p.stem: p for p in sorted(root.rglob("*.wav"))}
    txts = {p.stem: p for p in sorted(root.rglob("*.txt")) if _looks_like_annotation(p)}
    missing_txt = sorted(set(wavs) - set(txts))
    missing_wav = sorted(set(txts) - set(wavs))
    if missing_txt or missing_wav:
        raise CorpusError(
            f"unpaired files: wav without annotation {missing_txt[:5]}"
            f"{'...' if len(missing_txt) > 5 else ''}; "
            f"annotation without wav {missing_wav[:5]}{'...' if len(missing_wav) > 5 else ''}"
        )
    if not wavs:
        warnings.warn(f"{dataset_dir}: no recordings found")
    cycles = []
    for stem in sorted(wavs):
        meta = parse_stem(stem)
        rows = parse_annotation_file(txts[stem])
        prev_end = None
        for i, (start, end, cr, wh) in enumerate(rows):
            cycles.append(
                CycleRecord(
                    cycle_id=f"{stem}#{i}",
                    wav_path=str(wavs[stem]),
                    start_s=start,
                    end_s=end,
                    crackle=cr,
                    wheeze=wh,
                    label=label_of(cr, wh),
                    meta=meta,
                    overlaps_previous=prev_end is not None and start < prev_end,
                )
            )
            prev_end = end
    return cycles, summarize(cycles)


def _looks_like_annotation(path):
    """The ICBHI tree also ships free-text files; keep only 4-column tables."""
    try:
        with open(path) as f:
            first = f.readline().split()
        return len(first) == 4
    except OSError:
        return False


def summarize(cycles):
    counts = {lab: 0 for lab in LABELS}
    for c in cycles:
        counts[c.label] += 1
    return {"total": len(cycles), **counts}


def cycle_audio(record, _cache={}):
    """Slice one cycle's samples out of its recording; tiny per-file cache."""
    if record.wav_path not in _cache:
        if len(_cache) > 4:
            _cache.clear()
        _cache[record.wav_path] = read_wav(record.wav_path)
    rate, x = _cache[record.wav_path]
    a = int(round(record.start_s * rate))
    b = min(int(round(record.end_s * rate)), x.size)
    if a >= b:
        raise CorpusError(f"{record.cycle_id}: empty slice [{record.start_s}, {record.end_s}] at {rate} Hz")
    return rate, x[a:b]


def write_manifest(cycles, path):
    with open(path, "w") as f:
        for c in cycles:
            row = {
                "id": c.cycle_id,
                "label": c.label,
                "patient": c.meta.patient_id,
                "device": c.meta.device,
                "duration_s": round(c.end_s - c.start_s, 6),
                "wav": c.wav_path,
                "start_s": c.start_s,
                "end_s": c.end_s,
            }
            if c.overlaps_previous:
                row["overlap"] = True
            f.write(json.dumps(row) + "\n")


def load_manifest(path):
    rows = []
    with open(path) as f:
        for line in f:
            if line.strip():
                rows.append(json.loads(line))
    return rows


@dataclass
class SplitSpec:
    regime: str
    assignment: dict

    def side_ids(self, side):
        return [cid for cid, s in self.assignment.items() if s == side]

    @property
    def train_ids(self):
        return self.side_ids("train")

    @property
    def valid_ids(self):
        return self.side_ids("valid")

    def save(self, path):
        with open(path, "w") as f:
            f.write(f"# regime={self.regime}\n")
            for cid in sorted(self.assignment):
                f.write(f"{cid}\t{self.assignment[cid]}\n")

    @classmethod
    def load(cls, path):
        regime = "unknown"
        assignment = {}
        with open(path) as f:
            for line in f:
                line = line.rstrip("\n")
                if line.startswith("#"):
                    if "regime=" in line:
                        regime = line.split("regime=", 1)[1].strip()
                    continue
                if line.strip():
                    cid, side = line.split("\t")
                    assignment[cid] = side
        return cls(regime=regime, assignment=assignment)


def load_split_list(path):
    """Official two-column list: stem <tab> train|test."""
    sides = {}
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            fields = line.split()
            if len(fields) != 2 or fields[1] not in ("train", "test", "valid"):
                raise CorpusError(f"{path}:{lineno}: expected 'stem train|test', got {line!r}")
            sides[fields[0]] = "train" if fields[1] == "train" else "valid"
    return sides


def make_split(cycles, regime, seed=0, fold=0, n_folds=5, device=None, split_list=None):
    """Build a SplitSpec for one of the four regimes. Deterministic in seed."""
    ids = [c.cycle_id for c in cycles]
    if regime == "official_60_40":
        if split_list is None:
            raise CorpusError("official_60_40 needs the provided split-list file")
        stems = {c.cycle_id: c.meta.stem for c in cycles}
        known = {c.meta.stem for c in cycles}
        unknown = sorted(set(split_list) - known)
        if unknown:
            raise CorpusError(f"split list names stems absent from corpus: {unknown[:5]}")
        missing = sorted({s for s in stems.values() if s not in split_list})
        if missing:
            raise CorpusError(f"corpus stems missing from split list: {missing[:5]}")
        assignment = {cid: split_list[stems[cid]] for cid in ids}
    elif regime == "ratio_80_20":
        rng = np.random.default_rng(seed)
        order = list(ids)
        rng.shuffle(order)
        n_train = int(round(0.8 * len(order)))
        assignment = {cid: ("train" if i < n_train else "valid") for i, cid in enumerate(order)}
    elif regime == "patient_fold":
        if not (0 <= fold < n_folds):
            raise CorpusError(f"fold {fold} outside [0, {n_folds})")
        patients = sorted({c.meta.patient_id for c in cycles})
        rng = np.random.default_rng(seed)
        rng.shuffle(patients)
        valid_patients = {p for i, p in enumerate(patients) if i % n_folds == fold}
        assignment = {c.cycle_id: ("valid" if c.meta.patient_id in valid_patients else "train") for c in cycles}
    elif regime == "device_holdout":
        if device is None:
            raise CorpusError("device_holdout needs a device name")
        matched = [c for c in cycles if c.meta.device == device]
        if not matched:
            raise CorpusError(f"no cycles recorded with device {device!r}")
        assignment = {c.cycle_id: ("valid" if c.meta.device == device else "train") for c in cycles}
    else:
        raise CorpusError(f"unknown split regime {regime!r}")
    return SplitSpec(regime=regime, assignment=assignment)
