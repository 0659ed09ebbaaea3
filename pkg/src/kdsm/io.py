"""File formats: CSV data/metrics and the JSON model document."""

from __future__ import annotations

import base64
import csv
import json
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import linalg

from .base_density import BaseDensity
from .baselines.exact import ExactKernelModel
from .baselines.nystrom import NystromModel, gram
from .errors import InvalidSpecError
from .features import FeatureMap, KernelSpec
from .model import DensityModel
from .solver import Coefficients

MODEL_VERSION = "kdsm-model/1"


def fmt(v) -> str:
    """17 significant digits, enough to round-trip any float64."""
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def write_dict_rows(path, rows: list[dict], header: Sequence[str] | None = None) -> None:
    if header is None:
        header = list(rows[0]) if rows else []
    write_csv(path, header, ([r.get(k, "") for k in header] for r in rows))


def read_matrix_csv(path) -> tuple[list[str], np.ndarray]:
    """Numeric CSV with a header row."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration as exc:
            raise InvalidSpecError(f"{path} is empty") from exc
        rows = [[float(v) for v in r] for r in reader if r]
    if not rows:
        return header, np.zeros((0, len(header)))
    X = np.asarray(rows, dtype=float)
    if X.shape[1] != len(header):
        raise InvalidSpecError(f"{path}: row width does not match header")
    return header, X


def encode_array(a) -> dict:
    a = np.ascontiguousarray(np.asarray(a, dtype="<f8"))
    return {"shape": list(a.shape), "data": base64.b64encode(a.tobytes()).decode("ascii")}


def decode_array(obj: dict) -> np.ndarray:
    raw = base64.b64decode(obj["data"])
    return np.frombuffer(raw, dtype="<f8").reshape(obj["shape"]).astype(float)


def _q0_dict(q0):
    return None if q0 is None else q0.to_dict()


def _q0_from(obj):
    return None if obj is None else BaseDensity.from_dict(obj)


def model_to_dict(model, hyper: dict | None = None) -> dict:
    doc = {"version": MODEL_VERSION, "hyperparameters": hyper or {}}
    if isinstance(model, DensityModel):
        fm = model.fmap
        doc.update(
            kind="rff",
            provenance=model.coeffs.provenance,
            spec=fm.spec.to_dict(),
            seed=fm.seed,
            M=fm.M,
            d=fm.d,
            W=encode_array(fm.W),
            phases=None if fm.b is None else encode_array(fm.b),
            coefficients=encode_array(model.b),
            residual=model.coeffs.residual,
            q0=_q0_dict(model.q0),
            log_Z=model.log_Z,
            log_Z_se=model.log_Z_se,
            shift=None if model.shift is None else encode_array(model.shift),
            scale=None if model.scale is None else encode_array(model.scale),
        )
    elif isinstance(model, NystromModel):
        doc.update(
            kind="nystrom",
            provenance=model.provenance,
            spec=model.spec.to_dict(),
            seed=model.seed,
            inducing=encode_array(model.Z),
            inducing_index=[int(i) for i in model.index],
            coefficients=encode_array(model.beta),
            q0=_q0_dict(model.q0),
            lam=model.lam,
            sigma=model.sigma,
        )
    elif isinstance(model, ExactKernelModel):
        doc.update(
            kind="exact_kernel",
            provenance=model.provenance,
            spec=model.spec.to_dict(),
            data=encode_array(model.X),
            coefficients=encode_array(model.c),
            q0_score=encode_array(model.g),
            q0=_q0_dict(model.q0),
            lam=model.lam,
        )
    else:
        raise InvalidSpecError(f"cannot serialize {type(model).__name__}")
    return doc


def model_from_dict(doc: dict):
    if doc.get("version") != MODEL_VERSION:
        raise InvalidSpecError(f"unsupported model version {doc.get('version')!r}")
    kind = doc.get("kind")
    spec = KernelSpec.from_dict(doc["spec"])
    q0 = _q0_from(doc.get("q0"))
    if kind == "rff":
        phases = doc.get("phases")
        fm = FeatureMap(decode_array(doc["W"]), None if phases is None else decode_array(phases), spec, doc.get("seed"))
        coeffs = Coefficients(decode_array(doc["coefficients"]), doc.get("provenance", "dsm_closed_form"), doc.get("residual", 0.0))
        shift = doc.get("shift")
        scale = doc.get("scale")
        return DensityModel(
            coeffs,
            fm,
            q0,
            doc.get("log_Z"),
            doc.get("log_Z_se"),
            None if shift is None else decode_array(shift),
            None if scale is None else decode_array(scale),
        )
    if kind == "nystrom":
        Z = decode_array(doc["inducing"])
        factor = linalg.cho_factor(gram(Z, spec) + 1e-8 * np.eye(Z.shape[0]), lower=True)
        return NystromModel(
            Z,
            np.asarray(doc["inducing_index"], dtype=int),
            spec,
            decode_array(doc["coefficients"]),
            factor,
            q0,
            float(doc["lam"]),
            float(doc["sigma"]),
            doc.get("seed"),
        )
    if kind == "exact_kernel":
        return ExactKernelModel(
            decode_array(doc["data"]),
            spec,
            float(doc["lam"]),
            decode_array(doc["coefficients"]),
            decode_array(doc["q0_score"]),
            q0,
        )
    raise InvalidSpecError(f"unknown model kind {kind!r}")


def save_model(model, path, hyper: dict | None = None) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model, hyper), indent=1))


def load_model(path):
    return model_from_dict(json.loads(Path(path).read_text()))
