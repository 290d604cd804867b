"""Model file: one self-describing JSON envelope holding the shared PCA
stage, every client template, color references, decision policies, and
provenance.

Matrix payloads are base64-encoded little-endian float64 in row-major
order; everything else is readable JSON. Files are written atomically and
the reader rejects any payload whose byte length disagrees with its
recorded shape.
"""

import base64
import json
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .colorfeat import ChromaHistogram
from .decision import DecisionPolicy
from .discriminant import ClientTemplate
from .errors import ModelFormatError
from .imaging import GeometryConfig, SkinBounds
from .subspace import PcaStage

FORMAT_VERSION = 1


@dataclass
class FeatureParams:
    """Color-feature settings a verifier must replay exactly."""

    bins: int = 64
    hist_lo: float = -128.0
    hist_hi: float = 128.0
    skin_cr_lo: float = 133.0
    skin_cr_hi: float = 173.0
    skin_cb_lo: float = 77.0
    skin_cb_hi: float = 127.0

    def skin_bounds(self) -> SkinBounds:
        return SkinBounds(cr_lo=self.skin_cr_lo, cr_hi=self.skin_cr_hi,
                          cb_lo=self.skin_cb_lo, cb_hi=self.skin_cb_hi)


@dataclass
class ModelFile:
    """In-memory form of a trained (and possibly calibrated) model."""

    geometry: GeometryConfig
    pca_stage: PcaStage
    client_templates: dict
    color_references: dict      # client id -> (client hist, imposter hist)
    policies: dict              # client id -> DecisionPolicy
    global_policy: DecisionPolicy
    features: FeatureParams
    diagnostics: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)
    format_version: int = FORMAT_VERSION

    def policy_for(self, client_id) -> DecisionPolicy:
        return self.policies.get(client_id, self.global_policy)

    def client_ids(self):
        return sorted(self.client_templates)

    def single_client(self, client_id) -> "ModelFile":
        """Copy holding only one client, for stand-alone deployment."""
        if client_id not in self.client_templates:
            raise ModelFormatError(f"client {client_id!r} not in model")
        return ModelFile(
            geometry=self.geometry, pca_stage=self.pca_stage,
            client_templates={client_id: self.client_templates[client_id]},
            color_references={client_id: self.color_references[client_id]}
            if client_id in self.color_references else {},
            policies={client_id: self.policies[client_id]}
            if client_id in self.policies else {},
            global_policy=self.global_policy, features=self.features,
            diagnostics={client_id: self.diagnostics.get(client_id, {})},
            provenance=dict(self.provenance))


def _enc_array(arr) -> dict:
    a = np.ascontiguousarray(np.asarray(arr, dtype="<f8"))
    return {"shape": list(a.shape),
            "data": base64.b64encode(a.tobytes()).decode("ascii")}


def _dec_array(obj, name, expect_shape=None) -> np.ndarray:
    try:
        shape = tuple(int(s) for s in obj["shape"])
        raw = base64.b64decode(obj["data"], validate=True)
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"{name}: malformed matrix payload: {exc}") from exc
    count = int(np.prod(shape)) if shape else 1
    if len(raw) != count * 8:
        raise ModelFormatError(
            f"{name}: recorded shape {shape} needs {count * 8} payload bytes, "
            f"found {len(raw)}")
    arr = np.frombuffer(raw, dtype="<f8").reshape(shape).astype(float)
    if expect_shape is not None and arr.shape != tuple(expect_shape):
        raise ModelFormatError(
            f"{name}: shape {arr.shape} disagrees with expected {tuple(expect_shape)}")
    return arr


def _policy_to_dict(p: DecisionPolicy) -> dict:
    return {"threshold": p.threshold, "fusion_weight": p.fusion_weight,
            "mode": p.mode, "grey_stats": list(p.grey_stats),
            "color_stats": list(p.color_stats)}


def _policy_from_dict(d: dict, name: str) -> DecisionPolicy:
    try:
        return DecisionPolicy(threshold=float(d["threshold"]),
                              fusion_weight=float(d["fusion_weight"]),
                              mode=d["mode"],
                              grey_stats=tuple(d["grey_stats"]),
                              color_stats=tuple(d["color_stats"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"{name}: bad policy record: {exc}") from exc


def _hist_to_dict(h: ChromaHistogram) -> dict:
    return {"bins": h.bins, "lo": h.lo, "hi": h.hi,
            "pixel_count": h.pixel_count, "weights": _enc_array(h.weights)}


def _hist_from_dict(d: dict, name: str) -> ChromaHistogram:
    try:
        weights = _dec_array(d["weights"], name, (int(d["bins"]),))
        return ChromaHistogram(bins=int(d["bins"]), lo=float(d["lo"]),
                               hi=float(d["hi"]), weights=weights,
                               pixel_count=int(d["pixel_count"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"{name}: bad histogram record: {exc}") from exc


def model_to_dict(model: ModelFile) -> dict:
    geo = model.geometry
    stage = model.pca_stage
    templates = {}
    for cid in sorted(model.client_templates):
        t = model.client_templates[cid]
        templates[cid] = {"q": t.q, "d": t.d, "z": _enc_array(t.z),
                          "x": _enc_array(t.x), "m_c": _enc_array(t.m_c),
                          "m_i": _enc_array(t.m_i)}
    colors = {}
    for cid in sorted(model.color_references):
        ch, ih = model.color_references[cid]
        colors[cid] = {"client": _hist_to_dict(ch), "imposter": _hist_to_dict(ih)}
    return {
        "format_version": model.format_version,
        "geometry": {"rows": geo.rows, "cols": geo.cols,
                     "left_eye_target": list(geo.left_eye_target),
                     "right_eye_target": list(geo.right_eye_target)},
        "pca_stage": {"m": stage.m, "n": stage.n, "g": stage.g, "h": stage.h,
                      "x_p": _enc_array(stage.x_p), "z_p": _enc_array(stage.z_p),
                      "mean": _enc_array(stage.mean),
                      "eigvals_col": _enc_array(stage.eigvals_col),
                      "eigvals_row": _enc_array(stage.eigvals_row)},
        "client_templates": templates,
        "color_references": colors,
        "policies": {cid: _policy_to_dict(p)
                     for cid, p in sorted(model.policies.items())},
        "global_policy": _policy_to_dict(model.global_policy),
        "features": {"bins": model.features.bins,
                     "hist_lo": model.features.hist_lo,
                     "hist_hi": model.features.hist_hi,
                     "skin_cr_lo": model.features.skin_cr_lo,
                     "skin_cr_hi": model.features.skin_cr_hi,
                     "skin_cb_lo": model.features.skin_cb_lo,
                     "skin_cb_hi": model.features.skin_cb_hi},
        "diagnostics": model.diagnostics,
        "provenance": model.provenance,
    }


def _check_membership(templates, colors, policies):
    ids = set(templates)
    if colors and set(colors) != ids:
        raise ModelFormatError("color_references client ids disagree with templates")
    if policies and set(policies) != ids:
        raise ModelFormatError("policies client ids disagree with templates")


def model_from_dict(data: dict) -> ModelFile:
    version = data.get("format_version")
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported model format_version {version!r}")
    try:
        gd = data["geometry"]
        geo = GeometryConfig(rows=int(gd["rows"]), cols=int(gd["cols"]),
                             left_eye_target=tuple(gd["left_eye_target"]),
                             right_eye_target=tuple(gd["right_eye_target"]))
        sd = data["pca_stage"]
        m, n, g, h = (int(sd[k]) for k in ("m", "n", "g", "h"))
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"bad model envelope: {exc}") from exc
    if (m, n) != (geo.rows, geo.cols):
        raise ModelFormatError(
            f"pca_stage dimensions {m}x{n} disagree with geometry "
            f"{geo.rows}x{geo.cols}")
    stage = PcaStage(
        x_p=_dec_array(sd["x_p"], "pca_stage.x_p", (n, g)),
        z_p=_dec_array(sd["z_p"], "pca_stage.z_p", (h, m)),
        mean=_dec_array(sd["mean"], "pca_stage.mean", (m, n)),
        eigvals_col=_dec_array(sd["eigvals_col"], "pca_stage.eigvals_col", (g,)),
        eigvals_row=_dec_array(sd["eigvals_row"], "pca_stage.eigvals_row", (h,)),
        m=m, n=n, g=g, h=h)

    templates = {}
    for cid, td in data.get("client_templates", {}).items():
        try:
            q, d = int(td["q"]), int(td["d"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ModelFormatError(f"template {cid}: {exc}") from exc
        templates[cid] = ClientTemplate(
            client_id=cid,
            z=_dec_array(td["z"], f"template {cid}.z", (q, m)),
            x=_dec_array(td["x"], f"template {cid}.x", (n, d)),
            m_c=_dec_array(td["m_c"], f"template {cid}.m_c", (q, d)),
            m_i=_dec_array(td["m_i"], f"template {cid}.m_i", (q, d)),
            q=q, d=d)
    colors = {}
    for cid, cd in data.get("color_references", {}).items():
        colors[cid] = (_hist_from_dict(cd["client"], f"color {cid}.client"),
                       _hist_from_dict(cd["imposter"], f"color {cid}.imposter"))
    policies = {cid: _policy_from_dict(pd, f"policy {cid}")
                for cid, pd in data.get("policies", {}).items()}
    _check_membership(templates, colors, policies)
    try:
        fd = data["features"]
        features = FeatureParams(bins=int(fd["bins"]),
                                 hist_lo=float(fd["hist_lo"]),
                                 hist_hi=float(fd["hist_hi"]),
                                 skin_cr_lo=float(fd["skin_cr_lo"]),
                                 skin_cr_hi=float(fd["skin_cr_hi"]),
                                 skin_cb_lo=float(fd["skin_cb_lo"]),
                                 skin_cb_hi=float(fd["skin_cb_hi"]))
        global_policy = _policy_from_dict(data["global_policy"], "global_policy")
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"bad model envelope: {exc}") from exc
    return ModelFile(geometry=geo, pca_stage=stage, client_templates=templates,
                     color_references=colors, policies=policies,
                     global_policy=global_policy, features=features,
                     diagnostics=data.get("diagnostics", {}),
                     provenance=data.get("provenance", {}),
                     format_version=version)


def save_model(model: ModelFile, path) -> None:
    """Serialize atomically: full write to a temp file, then rename."""
    payload = json.dumps(model_to_dict(model), sort_keys=True,
                         separators=(",", ":")) + "\n"
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(prefix=".model-", dir=directory)
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def load_model(path) -> ModelFile:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ModelFormatError(f"cannot read model {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"model {path} is not valid JSON: {exc}") from exc
    return model_from_dict(data)
