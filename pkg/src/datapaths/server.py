"""HTTP service for models, extraction jobs, sessions, and layouts.

State lives in a flat directory of JSON documents keyed by id, so a restart
loses nothing but unfinished jobs. Long-running optimizations run on a
bounded worker pool behind job handles the client polls.
"""

from __future__ import annotations

import os
import tempfile
import threading
import uuid
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from fastapi import Body, FastAPI
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse

from . import formats as F
from .analytics import activation_diff, activation_stats, detect_pattern, diff_series, river_distances, set_relations
from .attack import AttackParams, mi_fgsm
from .contribution import NeuronMask, contribution_area, contribution_whole
from .errors import DatapathsError, DimensionError, ParseError, UnknownIdError, ValidationError
from .extract import binarize, extract_constrained, extract_datapath
from .layout import Rect, river_layout, treemap_layout, treemap_objective
from .model import full_gates, model_from_doc
from .network import forward, target_activation

_KINDS = ("models", "examples", "datapaths", "contributions", "jobs", "sessions")
_ROLES = ("source", "adversarial", "target")


class ConflictError(DatapathsError):
    """A request conflicts with the current job or session state."""

    code = "conflict"


class DocumentStore:
    """One JSON file per document, written atomically."""

    def __init__(self, root):
        self.root = Path(root)
        for kind in _KINDS:
            (self.root / kind).mkdir(parents=True, exist_ok=True)

    def _path(self, kind: str, doc_id: str) -> Path:
        if "/" in doc_id or doc_id in ("", ".", ".."):
            raise UnknownIdError(f"malformed id {doc_id!r}")
        return self.root / kind / f"{doc_id}.json"

    def save(self, kind: str, doc_id: str, doc: dict) -> None:
        path = self._path(kind, doc_id)
        fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                fh.write(F.json_dumps(doc))
            os.replace(tmp, path)
        finally:
            if os.path.exists(tmp):
                os.unlink(tmp)

    def load(self, kind: str, doc_id: str) -> dict:
        path = self._path(kind, doc_id)
        if not path.exists():
            raise UnknownIdError(f"unknown {kind[:-1]} id {doc_id!r}")
        return F.load_doc(path)

    def exists(self, kind: str, doc_id: str) -> bool:
        return self._path(kind, doc_id).exists()

    def ids(self, kind: str):
        return sorted(p.stem for p in (self.root / kind).glob("*.json"))


class AppState:
    def __init__(self, data_dir, workers: int):
        self.store = DocumentStore(data_dir)
        self.executor = ThreadPoolExecutor(max_workers=workers)
        self._model_cache: dict[str, object] = {}
        self._locks: dict[str, threading.Lock] = {}
        self._meta = threading.Lock()
        self._fail_interrupted_jobs()

    def _fail_interrupted_jobs(self):
        for job_id in self.store.ids("jobs"):
            doc = self.store.load("jobs", job_id)
            if doc.get("status") in ("pending", "running"):
                doc["status"] = "failed"
                doc["error"] = "interrupted by restart"
                self.store.save("jobs", job_id, doc)

    def session_lock(self, session_id: str) -> threading.Lock:
        with self._meta:
            return self._locks.setdefault(session_id, threading.Lock())

    def model(self, model_id: str):
        with self._meta:
            cached = self._model_cache.get(model_id)
        if cached is not None:
            return cached
        spec = model_from_doc(self.store.load("models", model_id))
        with self._meta:
            self._model_cache[model_id] = spec
        return spec

    def datapath(self, dp_id: str):
        dp, params = F.datapath_from_doc(self.store.load("datapaths", dp_id))
        return dp, params

    def example(self, example_id: str):
        x, label = F.image_from_doc(self.store.load("examples", example_id))
        return x, label

    def store_example(self, x, label=None) -> str:
        doc = F.image_doc(x, label)
        example_id = F.content_id(doc)
        self.store.save("examples", example_id, doc)
        return example_id


# -- job plumbing -------------------------------------------------------------

def _job_doc(job_id, kind, params):
    return {
        "version": F.SCHEMA_VERSION,
        "id": job_id,
        "kind": kind,
        "status": "pending",
        "params": params,
        "result": None,
        "error": None,
    }


def _submit_job(state: AppState, kind: str, params: dict, work) -> str:
    job_id = uuid.uuid4().hex[:16]
    state.store.save("jobs", job_id, _job_doc(job_id, kind, params))

    def run():
        doc = state.store.load("jobs", job_id)
        doc["status"] = "running"
        state.store.save("jobs", job_id, doc)
        try:
            result = work()
        except DatapathsError as exc:
            doc["status"] = "failed"
            doc["error"] = str(exc)
        else:
            doc["status"] = "done"
            doc["result"] = result
        state.store.save("jobs", job_id, doc)

    state.executor.submit(run)
    return job_id


def _extraction_params(payload: dict):
    return F.params_from_doc(payload.get("params", {}), "params")


def _attack_params(payload: dict) -> AttackParams:
    raw = dict(payload.get("params", {}))
    bounds = raw.pop("pixel_bounds", (0.0, 1.0))
    try:
        return AttackParams(
            epsilon=float(raw.pop("epsilon")),
            alpha=float(raw.pop("alpha")),
            mu=float(raw.pop("mu")),
            steps=int(raw.pop("steps")),
            pixel_bounds=(float(bounds[0]), float(bounds[1])),
        )
    except KeyError as exc:
        raise ParseError(f"missing field {exc.args[0]!r}", "params") from None


def _require_field(payload: dict, field: str):
    if field not in payload:
        raise ParseError(f"missing field {field!r}", field)
    return payload[field]


# -- session helpers ----------------------------------------------------------

def _session_datapaths(state: AppState, session: dict):
    refs = session["datapaths"]
    missing = [role for role in ("source", "adversarial") if not refs[role]]
    if not refs["targets"]:
        missing.append("target")
    if missing:
        raise ValidationError(f"session missing datapaths for {missing}", "datapaths")
    src, _ = state.datapath(refs["source"])
    adv, _ = state.datapath(refs["adversarial"])
    tars = [state.datapath(t)[0] for t in refs["targets"]]
    return src, adv, tars


def _refresh_pattern_report(state: AppState, session: dict) -> None:
    try:
        src, adv, tars = _session_datapaths(state, session)
        model = state.model(session["model_id"])
        report = detect_pattern(diff_series(model, adv, src, tars[0]))
    except (ValidationError, UnknownIdError):
        session["pattern_report"] = None
        return
    session["pattern_report"] = F.pattern_report_doc(report)


def _gated_layer(model, index: int) -> int:
    if not 0 <= index < len(model.gated_layers):
        raise UnknownIdError(f"layer index {index} out of range")
    return model.gated_layers[index]


def _error_response(status: int, exc: Exception) -> JSONResponse:
    code = getattr(exc, "code", "error")
    return JSONResponse(status_code=status, content={"error": {"code": code, "message": str(exc)}})


def create_app(data_dir, workers: int = 2, ui_origin: str = "*") -> FastAPI:
    state = AppState(data_dir, workers)
    app = FastAPI(title="datapaths", docs_url=None, redoc_url=None)
    app.state.datapaths = state
    app.add_middleware(
        CORSMiddleware,
        allow_origins=[ui_origin],
        allow_methods=["*"],
        allow_headers=["*"],
    )

    @app.exception_handler(UnknownIdError)
    def _unknown(request, exc):
        return _error_response(404, exc)

    @app.exception_handler(ValidationError)
    def _invalid(request, exc):
        return _error_response(400, exc)

    @app.exception_handler(DimensionError)
    def _dimension(request, exc):
        return _error_response(400, exc)

    @app.exception_handler(ParseError)
    def _parse(request, exc):
        return _error_response(400, exc)

    @app.exception_handler(ConflictError)
    def _conflict(request, exc):
        return _error_response(409, exc)

    @app.get("/health")
    def health():
        return {"status": "ok"}

    # -- models ---------------------------------------------------------------

    @app.post("/models")
    def post_model(doc: dict = Body(...)):
        model_from_doc(doc)  # reject invalid documents before storing
        model_id = F.content_id(doc)
        state.store.save("models", model_id, doc)
        return {"model_id": model_id}

    @app.get("/models/{model_id}")
    def get_model(model_id: str):
        model = state.model(model_id)
        return {
            "id": model_id,
            "input_shape": list(model.input_shape),
            "class_count": model.class_count,
            "gate_count": model.gate_count,
            "layer_count": len(model.layers),
            "gated_layers": list(model.gated_layers),
            "layer_fms": {str(l): list(model.layer_fms[l]) for l in model.gated_layers},
            "layer_groups": [
                {"name": name, "first_layer": first, "last_layer": last}
                for name, first, last in model.layer_groups
            ],
        }

    # -- examples -------------------------------------------------------------

    @app.post("/examples")
    def post_example(doc: dict = Body(...)):
        x, label = F.image_from_doc(doc)
        return {"example_id": state.store_example(x, label)}

    @app.get("/examples/{example_id}")
    def get_example(example_id: str):
        return state.store.load("examples", example_id)

    # -- jobs -----------------------------------------------------------------

    @app.post("/jobs/extract")
    def post_extract(payload: dict = Body(...)):
        model_id = _require_field(payload, "model_id")
        example_id = _require_field(payload, "example_id")
        model = state.model(model_id)
        x, _ = state.example(example_id)
        params = _extraction_params(payload)

        def work():
            dp = extract_datapath(model, x, params, model_ref=model_id, example_ref=example_id)
            doc = F.datapath_doc(dp, params)
            dp_id = F.content_id(doc)
            state.store.save("datapaths", dp_id, doc)
            return {
                "datapath_id": dp_id,
                "converged_loss": dp.converged_loss,
                "label_preserved": dp.label_preserved,
            }

        return {"job_id": _submit_job(state, "extract", payload, work)}

    @app.post("/jobs/extract-constrained")
    def post_extract_constrained(payload: dict = Body(...)):
        model_id = _require_field(payload, "model_id")
        example_ids = list(_require_field(payload, "example_ids"))
        model = state.model(model_id)
        examples = [state.example(e)[0] for e in example_ids]
        params = _extraction_params(payload)

        def work():
            dps = extract_constrained(model, examples, params,
                                      model_ref=model_id, example_refs=example_ids)
            ids = []
            for dp in dps:
                doc = F.datapath_doc(dp, params)
                dp_id = F.content_id(doc)
                state.store.save("datapaths", dp_id, doc)
                ids.append(dp_id)
            return {"datapath_ids": ids}

        return {"job_id": _submit_job(state, "extract_constrained", payload, work)}

    @app.post("/jobs/contribution")
    def post_contribution(payload: dict = Body(...)):
        model_id = _require_field(payload, "model_id")
        example_ids = list(_require_field(payload, "example_ids"))
        target_fm = int(_require_field(payload, "target_fm"))
        session_id = payload.get("session_id")
        model = state.model(model_id)
        examples = [state.example(e)[0] for e in example_ids]
        params = _extraction_params(payload)

        mask = None
        if payload.get("mask") is not None:
            mask = F.mask_from_rle(payload["mask"])
        elif session_id is not None:
            session = state.store.load("sessions", session_id)
            rle = session["masks"].get(str(target_fm))
            if rle is not None:
                mask = F.mask_from_rle(rle)

        def work():
            if mask is None:
                result = contribution_whole(model, examples, target_fm, params)
            else:
                result = contribution_area(model, examples, target_fm,
                                           NeuronMask(target_fm, mask), params)
            doc = F.contribution_doc(result, params, mask)
            result_id = F.content_id(doc)
            state.store.save("contributions", result_id, doc)
            if session_id is not None:
                with state.session_lock(session_id):
                    session = state.store.load("sessions", session_id)
                    if result_id not in session["contributions"]:
                        session["contributions"].append(result_id)
                    state.store.save("sessions", session_id, session)
            return {"contribution_id": result_id}

        return {"job_id": _submit_job(state, "contribution", payload, work)}

    @app.post("/jobs/attack")
    def post_attack(payload: dict = Body(...)):
        model_id = _require_field(payload, "model_id")
        example_id = _require_field(payload, "example_id")
        true_label = int(_require_field(payload, "true_label"))
        model = state.model(model_id)
        x, _ = state.example(example_id)
        params = _attack_params(payload)

        def work():
            adv = mi_fgsm(model, x, true_label, params)
            adv_id = state.store_example(adv)
            predicted = forward(model, adv).predicted_label
            return {"example_id": adv_id, "predicted_label": predicted}

        return {"job_id": _submit_job(state, "attack", payload, work)}

    @app.get("/jobs/{job_id}")
    def get_job(job_id: str):
        return state.store.load("jobs", job_id)

    @app.get("/jobs/{job_id}/result")
    def get_job_result(job_id: str):
        doc = state.store.load("jobs", job_id)
        if doc["status"] != "done":
            raise ConflictError(f"job {job_id} is {doc['status']}, result not available")
        return doc["result"]

    @app.get("/datapaths/{dp_id}")
    def get_datapath(dp_id: str):
        return state.store.load("datapaths", dp_id)

    @app.get("/contributions/{result_id}")
    def get_contribution(result_id: str):
        return state.store.load("contributions", result_id)

    # -- sessions -------------------------------------------------------------

    @app.post("/sessions")
    def post_session(payload: dict = Body(...)):
        model_id = _require_field(payload, "model_id")
        state.model(model_id)
        triplet = dict(_require_field(payload, "triplet"))
        for role in ("source", "adversarial"):
            state.store.load("examples", _require_field(triplet, role))
        targets = list(_require_field(triplet, "targets"))
        for t in targets:
            state.store.load("examples", t)
        refs = payload.get("datapaths", {})
        session = {
            "version": F.SCHEMA_VERSION,
            "id": uuid.uuid4().hex[:16],
            "model_id": model_id,
            "triplet": {
                "source": triplet["source"],
                "adversarial": triplet["adversarial"],
                "targets": targets,
                "source_label": triplet.get("source_label"),
                "predicted_label": triplet.get("predicted_label"),
            },
            "datapaths": {
                "source": refs.get("source"),
                "adversarial": refs.get("adversarial"),
                "targets": list(refs.get("targets", [])),
            },
            "pattern_report": None,
            "masks": {},
            "contributions": [],
        }
        for dp_id in [session["datapaths"]["source"], session["datapaths"]["adversarial"],
                      *session["datapaths"]["targets"]]:
            if dp_id is not None:
                state.store.load("datapaths", dp_id)
        _refresh_pattern_report(state, session)
        state.store.save("sessions", session["id"], session)
        return {"session_id": session["id"]}

    @app.get("/sessions/{session_id}")
    def get_session(session_id: str):
        return state.store.load("sessions", session_id)

    @app.post("/sessions/{session_id}/datapaths")
    def attach_datapath(session_id: str, payload: dict = Body(...)):
        role = _require_field(payload, "role")
        dp_id = _require_field(payload, "datapath_id")
        if role not in _ROLES:
            raise ValidationError(f"role must be one of {_ROLES}", "role")
        with state.session_lock(session_id):
            session = state.store.load("sessions", session_id)
            dp, _ = state.datapath(dp_id)
            if dp.model_ref and dp.model_ref != session["model_id"]:
                raise ValidationError("datapath belongs to a different model", "datapath_id")
            if role == "target":
                index = int(payload.get("index", len(session["datapaths"]["targets"])))
                targets = session["datapaths"]["targets"]
                if not 0 <= index <= len(targets):
                    raise ValidationError(f"target index {index} out of range", "index")
                if index == len(targets):
                    targets.append(dp_id)
                else:
                    targets[index] = dp_id
            else:
                session["datapaths"][role] = dp_id
            _refresh_pattern_report(state, session)
            state.store.save("sessions", session_id, session)
            return session["datapaths"]

    @app.put("/sessions/{session_id}/masks/{fm}")
    def put_mask(session_id: str, fm: int, doc: dict = Body(...)):
        with state.session_lock(session_id):
            session = state.store.load("sessions", session_id)
            model = state.model(session["model_id"])
            if fm not in model.gate_index:
                raise UnknownIdError(f"unknown feature map {fm}")
            mask = F.mask_from_rle(doc)
            if mask.shape != model.fm_shape(fm):
                raise DimensionError(
                    f"mask shape {mask.shape} does not match map shape {model.fm_shape(fm)}"
                )
            if not mask.any():
                raise ValidationError("empty selection", "mask")
            session["masks"][str(fm)] = F.mask_rle(mask)
            state.store.save("sessions", session_id, session)
            return {"feature_map": fm, "selected": int(mask.sum())}

    # -- layouts and encodings ------------------------------------------------

    @app.get("/sessions/{session_id}/river")
    def get_river(session_id: str, width: float = 960.0, height: float = 320.0,
                  scale: float = 1.0, target: int = 0):
        session = state.store.load("sessions", session_id)
        model = state.model(session["model_id"])
        src, adv, tars = _session_datapaths(state, session)
        if not 0 <= target < len(tars):
            raise UnknownIdError(f"target index {target} out of range")
        tar = tars[target]
        d1, d2, d3 = river_distances(model, src, adv, tar)
        layout = river_layout(d1, d2, d3, Rect(0.0, 0.0, width, height), scale=scale)
        doc = F.river_layout_doc(layout)
        doc["layers"] = list(model.gated_layers)
        doc["pattern_report"] = session["pattern_report"]
        return doc

    @app.get("/sessions/{session_id}/layers/{layer}/treemap")
    def get_treemap(session_id: str, layer: int, width: float = 600.0, height: float = 400.0):
        session = state.store.load("sessions", session_id)
        model = state.model(session["model_id"])
        conv_layer = _gated_layer(model, layer)
        layer_fms = set(model.layer_fms[conv_layer])
        src, adv, tars = _session_datapaths(state, session)
        refs = session["datapaths"]
        tagged = []
        for name, dp, dp_id in (("source", src, refs["source"]),
                                ("adversarial", adv, refs["adversarial"]),
                                ("target", tars[0], refs["targets"][0])):
            _, params = state.datapath(dp_id)
            members = binarize(dp, params.binarize_tau) & layer_fms
            if members:
                tagged.append((name, members))
        if not tagged:
            raise ValidationError(f"no feature maps survive binarization in layer {conv_layer}",
                                  "layer")
        relation = set_relations(tagged)
        layout = treemap_layout(relation, Rect(0.0, 0.0, width, height))
        doc = F.treemap_layout_doc(layout)
        # cells carry their member maps so clients can draw per-map fills
        members = {tuple(sorted(sig)): sorted(fms) for sig, fms in relation.regions}
        for rec in doc["cells"]:
            rec["fms"] = members[tuple(rec["sets"])]
        doc["layer"] = conv_layer
        doc["objective"] = treemap_objective(layout, relation)
        return doc

    @app.get("/sessions/{session_id}/layers/{layer}/feature-maps")
    def get_feature_maps(session_id: str, layer: int, encoding: str = "activation_diff"):
        session = state.store.load("sessions", session_id)
        model = state.model(session["model_id"])
        conv_layer = _gated_layer(model, layer)
        fms = model.layer_fms[conv_layer]
        if encoding == "activation_diff":
            x_src, _ = state.example(session["triplet"]["source"])
            x_adv, _ = state.example(session["triplet"]["adversarial"])
            res_src = forward(model, x_src)
            res_adv = forward(model, x_adv)
            values = {
                str(fm): activation_diff(activation_stats(res_adv, fm),
                                         activation_stats(res_src, fm))
                for fm in fms
            }
        elif encoding == "contribution":
            values = None
            for result_id in reversed(session["contributions"]):
                parsed = F.contribution_from_doc(state.store.load("contributions", result_id))
                covered = {
                    str(fm): v for fm, v in zip(parsed["feature_maps"], parsed["values"])
                    if fm in fms
                }
                if covered:
                    values = covered
                    break
            if values is None:
                raise ValidationError(f"no contribution result covers layer {conv_layer}",
                                      "encoding")
        else:
            raise ValidationError("encoding must be activation_diff or contribution", "encoding")
        return {"layer": conv_layer, "encoding": encoding, "values": values}

    @app.get("/activations/{session_id}/{example_id}/{fm}")
    def get_activation(session_id: str, example_id: str, fm: int):
        session = state.store.load("sessions", session_id)
        model = state.model(session["model_id"])
        if fm not in model.gate_index:
            raise UnknownIdError(f"unknown feature map {fm}")
        x, _ = state.example(example_id)
        act = target_activation(model, x, full_gates(model), fm)
        doc = F.tensor_doc(act)
        doc["feature_map"] = fm
        doc["example_id"] = example_id
        return doc

    return app


def run_server(data_dir, host: str = "127.0.0.1", port: int = 8000,
               workers: int = 2, ui_origin: str = "*") -> None:
    import uvicorn

    uvicorn.run(create_app(data_dir, workers=workers, ui_origin=ui_origin),
                host=host, port=port, log_level="warning")
