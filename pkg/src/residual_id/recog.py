"""Closed-set speaker identification on top of the GMM/HMM back ends.

A SpeakerModel pairs a speaker id with trained parameters and a
fingerprint of the feature configuration it was built under; scoring is
refused when the evaluator's configuration differs. Identification is a
plain argmax of per-model log-likelihood, ties broken toward the
lexicographically smallest speaker id.
"""

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import gmm as gmm_mod
from . import hmm as hmm_mod
from .audio_io import AudioClip
from .errors import (
    ClipShorterThanRequested,
    CorruptModel,
    EmptyModelSet,
    FingerprintMismatch,
    InsufficientTrainingData,
    IoFailure,
    ResidualIdError,
    TooFewFrames,
    UnknownFormatVersion,
)
from .features import FeatureConfig, FeatureMatrix, extract_features
from .gmm import EmConfig, GmmParams
from .hmm import HmmParams, Topology

GMM_KIND = "gmm"
HMM_KIND = "hmm"
MODEL_HEADER = "residual-id-model v1"
_FMT = "%.17g"  # round-trips float64 exactly


@dataclass(frozen=True)
class ModelSpec:
    """What to train: model kind, state count, total mixture components."""

    kind: str
    mixture_total: int
    num_states: int = 1
    topology: str = hmm_mod.ERGODIC

    def __post_init__(self):
        if self.kind not in (GMM_KIND, HMM_KIND):
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.mixture_total < 1:
            raise ValueError("mixture_total must be positive")


@dataclass(frozen=True, eq=False)
class SpeakerModel:
    speaker_id: str
    model_kind: str
    params: object                      # GmmParams or HmmParams
    feature_config_fingerprint: str

    @property
    def mixture_total(self):
        if self.model_kind == GMM_KIND:
            return self.params.num_components
        return self.params.total_components

    @property
    def num_states(self):
        return 1 if self.model_kind == GMM_KIND else self.params.num_states


def _check_fingerprints(models, cfg):
    expected = cfg.fingerprint()
    for model in models:
        if model.feature_config_fingerprint != expected:
            raise FingerprintMismatch(
                f"model {model.speaker_id} was built under fingerprint "
                f"{model.feature_config_fingerprint}, evaluator has {expected}"
            )


def score_features(model, X):
    """Log-likelihood of a feature matrix under one speaker model."""
    if model.model_kind == GMM_KIND:
        return gmm_mod.gmm_score(model.params, X)
    return hmm_mod.forward_loglik(model.params, X)


def enroll_from_features(speaker_id, feature_list, spec, cfg, em_cfg, seed):
    """Train a speaker model from already-extracted feature matrices."""
    total = sum(X.num_frames for X in feature_list)
    if total < spec.mixture_total:
        raise InsufficientTrainingData(
            f"{total} frames < {spec.mixture_total} mixture components"
        )
    fit_cfg = EmConfig(
        max_iters=em_cfg.max_iters,
        rel_tol=em_cfg.rel_tol,
        variance_floor_factor=em_cfg.variance_floor_factor,
        seed=seed,
    )
    try:
        if spec.kind == GMM_KIND:
            rows = np.concatenate([X.rows for X in feature_list], axis=0)
            params, _ = gmm_mod.em_fit(rows, spec.mixture_total, fit_cfg)
        else:
            params, _ = hmm_mod.baum_welch_fit(
                feature_list,
                spec.num_states,
                spec.mixture_total,
                Topology(spec.topology),
                fit_cfg,
            )
    except TooFewFrames as exc:
        raise InsufficientTrainingData(str(exc)) from exc
    return SpeakerModel(
        speaker_id=speaker_id,
        model_kind=spec.kind,
        params=params,
        feature_config_fingerprint=cfg.fingerprint(),
    )


def enroll(speaker_id, train_clips, spec, cfg=FeatureConfig(),
           em_cfg=EmConfig(), seed=0):
    """Extract features from the training clips and fit one speaker model.

    GMM training pools the frames of all clips; HMM training keeps the
    per-clip sequences separate so transition statistics stay meaningful.
    Deterministic for a fixed seed.
    """
    feature_list = [extract_features(clip, cfg) for clip in train_clips]
    return enroll_from_features(speaker_id, feature_list, spec, cfg, em_cfg, seed)


def pick_best(scores):
    """Argmax over {speaker_id: score}, ties to the smallest id."""
    ordered = sorted(scores)
    best_id = ordered[0]
    for speaker_id in ordered[1:]:
        if scores[speaker_id] > scores[best_id]:
            best_id = speaker_id
    return best_id


def truncate_clip(clip, duration_s):
    need = int(round(duration_s * clip.sample_rate_hz))
    if len(clip.samples) < need:
        raise ClipShorterThanRequested(
            f"clip has {len(clip.samples)} samples, need {need}"
        )
    return AudioClip(samples=clip.samples[:need], sample_rate_hz=clip.sample_rate_hz)


def identify_features(models, X):
    """Score a feature matrix against every model; argmax wins."""
    if not models:
        raise EmptyModelSet("no enrolled models")
    scores = {m.speaker_id: score_features(m, X) for m in models}
    return pick_best(scores), scores


def identify(models, test_clip, test_duration_s, cfg=FeatureConfig()):
    """Identify the speaker of the leading test_duration_s seconds.

    Features are extracted once and scored against every model regardless
    of kind. Returns (predicted_speaker_id, scores_by_speaker).
    """
    models = list(models)
    if not models:
        raise EmptyModelSet("no enrolled models")
    _check_fingerprints(models, cfg)
    clipped = truncate_clip(test_clip, test_duration_s)
    X = extract_features(clipped, cfg)
    return identify_features(models, X)


@dataclass(frozen=True)
class Trial:
    model_kind: str
    num_states: int
    mixture_total: int
    test_duration_s: float
    trial_index: int
    true_id: str
    predicted_id: str          # empty string when the trial failed
    correct: bool
    failed: bool
    scores: dict


@dataclass
class EvalReport:
    """Recognition rates per grid cell plus the per-trial evidence."""

    cells: dict = field(default_factory=dict)   # key -> (trials, correct, rate)
    trials: list = field(default_factory=list)

    def rate(self, model_kind, mixture_total, test_duration_s):
        return self.cells[(model_kind, mixture_total, test_duration_s)][2]

    def recompute_cells(self):
        """Rebuild the cell map from the trial log (used for verification
        and by the report re-renderer)."""
        fresh = {}
        for t in self.trials:
            key = (t.model_kind, t.mixture_total, t.test_duration_s)
            total, correct = fresh.get(key, (0, 0))
            fresh[key] = (total + 1, correct + (1 if t.correct else 0))
        return {
            key: (total, correct, 100.0 * correct / total)
            for key, (total, correct) in fresh.items()
        }


def evaluate(models, test_set, durations, mixture_totals, cfg=FeatureConfig()):
    """Run the full (model kind x mixture total x duration) grid.

    `models` may mix kinds and sizes; they are grouped into homogeneous
    cells by (kind, mixture_total). Every test clip must cover the largest
    duration. A trial whose identification raises is counted as incorrect
    and flagged in the log.
    """
    models = list(models)
    if not models:
        raise EmptyModelSet("no enrolled models")
    _check_fingerprints(models, cfg)
    durations = sorted(durations)
    mixture_totals = sorted(mixture_totals)

    groups = {}
    for model in models:
        if model.mixture_total in mixture_totals:
            key = (model.model_kind, model.mixture_total)
            groups.setdefault(key, []).append(model)

    # features per (clip index, duration), shared across cells
    feature_cache = {}

    def features_for(idx, clip, duration):
        if (idx, duration) not in feature_cache:
            feature_cache[(idx, duration)] = extract_features(
                truncate_clip(clip, duration), cfg
            )
        return feature_cache[(idx, duration)]

    report = EvalReport()
    for (kind, mixture_total) in sorted(groups):
        cell_models = groups[(kind, mixture_total)]
        states = {m.num_states for m in cell_models}
        if len(states) != 1:
            raise ValueError(
                f"cell ({kind}, {mixture_total}) mixes state counts {states}"
            )
        num_states = states.pop()
        for duration in durations:
            total = 0
            correct = 0
            for idx, (true_id, clip) in enumerate(test_set):
                failed = False
                scores = {}
                predicted = ""
                try:
                    X = features_for(idx, clip, duration)
                    predicted, scores = identify_features(cell_models, X)
                except ResidualIdError:
                    failed = True
                ok = (not failed) and predicted == true_id
                report.trials.append(
                    Trial(
                        model_kind=kind,
                        num_states=num_states,
                        mixture_total=mixture_total,
                        test_duration_s=duration,
                        trial_index=idx,
                        true_id=true_id,
                        predicted_id=predicted,
                        correct=ok,
                        failed=failed,
                        scores=scores,
                    )
                )
                total += 1
                correct += 1 if ok else 0
            report.cells[(kind, mixture_total, duration)] = (
                total,
                correct,
                100.0 * correct / total,
            )
    return report


def render_table(report, kinds=(GMM_KIND, HMM_KIND)):
    """Human-readable grid: rows are mixture totals, column groups are test
    durations with one sub-column per model kind."""
    durations = sorted({key[2] for key in report.cells})
    mixtures = sorted({key[1] for key in report.cells})
    present = [k for k in kinds if any(key[0] == k for key in report.cells)]

    lines = ["Recognition rate (%)"]
    header1 = f"{'':>10}"
    header2 = f"{'mixtures':>10}"
    for d in durations:
        group = " ".join(f"{k.upper():>8}" for k in present)
        label = f"{d:g} s"
        header1 += f"  {label:^{len(group)}}"
        header2 += "  " + group
    lines.append(header1)
    lines.append(header2)
    for m in mixtures:
        row = f"{m:>10}"
        for d in durations:
            cells = []
            for k in present:
                if (k, m, d) in report.cells:
                    cells.append(f"{report.cells[(k, m, d)][2]:>8.1f}")
                else:
                    cells.append(f"{'-':>8}")
            row += "  " + " ".join(cells)
        lines.append(row)
    return "\n".join(lines) + "\n"


def report_csv_lines(report):
    """Cell rows in the documented CSV schema."""
    lines = ["model_kind,num_states,mixture_total,test_duration_s,trials,correct,rate_percent"]
    states_by_cell = {}
    for t in report.trials:
        states_by_cell[(t.model_kind, t.mixture_total, t.test_duration_s)] = t.num_states
    for key in sorted(report.cells):
        kind, mixture, duration = key
        total, correct, rate = report.cells[key]
        lines.append(
            f"{kind},{states_by_cell.get(key, 1)},{mixture},{duration!r},"
            f"{total},{correct},{rate!r}"
        )
    return lines


def trial_log_lines(report):
    """Per-trial CSV including the scores each model produced."""
    lines = [
        "model_kind,num_states,mixture_total,test_duration_s,trial_index,"
        "true_id,predicted_id,correct,failed,scores"
    ]
    for t in report.trials:
        packed = ";".join(
            f"{sid}:{_FMT % score}" for sid, score in sorted(t.scores.items())
        )
        lines.append(
            f"{t.model_kind},{t.num_states},{t.mixture_total},{t.test_duration_s!r},"
            f"{t.trial_index},{t.true_id},{t.predicted_id},"
            f"{int(t.correct)},{int(t.failed)},{packed}"
        )
    return lines


def parse_trial_log(lines):
    """Inverse of trial_log_lines, for re-rendering reports."""
    trials = []
    for line in lines[1:]:
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 10:
            raise CorruptModel(f"trial log row has {len(parts)} fields, want 10")
        scores = {}
        if parts[9]:
            for item in parts[9].split(";"):
                sid, value = item.rsplit(":", 1)
                scores[sid] = float(value)
        trials.append(
            Trial(
                model_kind=parts[0],
                num_states=int(parts[1]),
                mixture_total=int(parts[2]),
                test_duration_s=float(parts[3]),
                trial_index=int(parts[4]),
                true_id=parts[5],
                predicted_id=parts[6],
                correct=bool(int(parts[7])),
                failed=bool(int(parts[8])),
                scores=scores,
            )
        )
    report = EvalReport(trials=trials)
    report.cells = report.recompute_cells()
    return report


# ---------------------------------------------------------------------------
# model store: versioned UTF-8 text, 17 significant digits

def _fmt_vector(values):
    return " ".join(_FMT % v for v in np.asarray(values, dtype=np.float64))


def _gmm_lines(params, prefix=""):
    lines = [f"{prefix}weights = {_fmt_vector(params.weights)}"]
    for i in range(params.num_components):
        lines.append(f"{prefix}mean {i} = {_fmt_vector(params.means[i])}")
    for i in range(params.num_components):
        lines.append(f"{prefix}var {i} = {_fmt_vector(params.variances[i])}")
    return lines


def save_model(model, path):
    """Serialize a SpeakerModel to the versioned text format."""
    lines = [MODEL_HEADER]
    lines.append(f"kind = {model.model_kind}")
    lines.append(f"speaker = {model.speaker_id}")
    lines.append(f"fingerprint = {model.feature_config_fingerprint}")
    if model.model_kind == GMM_KIND:
        params = model.params
        lines.append(f"dim = {params.dim}")
        lines.append(f"components = {params.num_components}")
        lines.extend(_gmm_lines(params))
    else:
        params = model.params
        lines.append(f"dim = {params.dim}")
        lines.append(f"states = {params.num_states}")
        lines.append(f"topology = {params.topology.kind}")
        lines.append(f"components_per_state = {params.emissions[0].num_components}")
        lines.append(f"pi = {_fmt_vector(params.initial)}")
        for i in range(params.num_states):
            lines.append(f"A {i} = {_fmt_vector(params.transitions[i])}")
        for j, emission in enumerate(params.emissions):
            lines.extend(_gmm_lines(emission, prefix=f"state {j} "))
    try:
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


class _FieldReader:
    def __init__(self, lines):
        self.lines = [ln for ln in lines if ln.strip()]
        self.pos = 0

    def take(self, name):
        if self.pos >= len(self.lines):
            raise CorruptModel(f"missing field {name!r} (file truncated)")
        line = self.lines[self.pos]
        self.pos += 1
        key, sep, value = line.partition("=")
        if not sep or key.strip() != name:
            raise CorruptModel(f"expected field {name!r}, found {line!r}")
        return value.strip()

    def take_vector(self, name, length):
        value = self.take(name)
        parts = value.split()
        if len(parts) != length:
            raise CorruptModel(f"field {name!r} has {len(parts)} values, want {length}")
        try:
            return np.array([float(p) for p in parts])
        except ValueError as exc:
            raise CorruptModel(f"field {name!r} holds a non-numeric value") from exc


def _read_gmm(reader, dim, components, prefix=""):
    weights = reader.take_vector(f"{prefix}weights", components)
    means = np.stack(
        [reader.take_vector(f"{prefix}mean {i}", dim) for i in range(components)]
    )
    variances = np.stack(
        [reader.take_vector(f"{prefix}var {i}", dim) for i in range(components)]
    )
    try:
        return GmmParams(weights=weights, means=means, variances=variances)
    except ValueError as exc:
        raise CorruptModel(f"invariant violated: {exc}") from exc


def load_model(path):
    """Load a SpeakerModel, enforcing every stored-parameter invariant."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    lines = text.splitlines()
    if not lines or lines[0].strip() != MODEL_HEADER:
        raise UnknownFormatVersion(
            f"{path}: header {lines[0]!r} is not {MODEL_HEADER!r}"
            if lines
            else f"{path}: empty file"
        )
    reader = _FieldReader(lines[1:])
    kind = reader.take("kind")
    speaker = reader.take("speaker")
    fingerprint = reader.take("fingerprint")
    try:
        if kind == GMM_KIND:
            dim = int(reader.take("dim"))
            components = int(reader.take("components"))
            params = _read_gmm(reader, dim, components)
        elif kind == HMM_KIND:
            dim = int(reader.take("dim"))
            states = int(reader.take("states"))
            topology = Topology(reader.take("topology"))
            per_state = int(reader.take("components_per_state"))
            initial = reader.take_vector("pi", states)
            transitions = np.stack(
                [reader.take_vector(f"A {i}", states) for i in range(states)]
            )
            emissions = [
                _read_gmm(reader, dim, per_state, prefix=f"state {j} ")
                for j in range(states)
            ]
            try:
                params = HmmParams(
                    transitions=transitions,
                    initial=initial,
                    emissions=emissions,
                    topology=topology,
                )
            except ValueError as exc:
                raise CorruptModel(f"invariant violated: {exc}") from exc
        else:
            raise CorruptModel(f"unknown model kind {kind!r}")
    except ValueError as exc:
        raise CorruptModel(f"malformed numeric field: {exc}") from exc
    return SpeakerModel(
        speaker_id=speaker,
        model_kind=kind,
        params=params,
        feature_config_fingerprint=fingerprint,
    )
