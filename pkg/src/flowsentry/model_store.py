"""Line-oriented text serialization for the four model kinds.

Grammar (UTF-8, LF line endings)::

    file     := MAGIC NL header ("---" NL section)* "---" NL "end" NL
    header   := (key " = " value NL)*
    section  := title NL body-line*

The header carries ``format_version``, ``model_kind`` (dt, rf, gbt, svm),
``feature_schema`` (digest of the ordered feature names), ``labels`` (the
label vocabulary), ``classes`` (vocabulary indices the model predicts),
``seed`` and ``param.<name>`` lines. Tree sections list nodes in pre-order,
one per line: ``split <feature> <threshold> <left> <right>`` or
``leaf <value>``. Reals are written with ``repr`` so they parse back exactly.
"""
import math
import os

import numpy as np

from .ensembles import BoostedTreesClassifier, RandomForestClassifier
from .schema import FEATURE_NAMES, LABELS, schema_hash
from .svm import LinearSVMClassifier
from .tree import LEAF, DecisionTreeClassifier, Tree

MAGIC = "flowsentry-model"
FORMAT_VERSION = 1
SEP = "---"

_KINDS = {
    DecisionTreeClassifier: "dt",
    RandomForestClassifier: "rf",
    BoostedTreesClassifier: "gbt",
    LinearSVMClassifier: "svm",
}
_CLASSES = {kind: cls for cls, kind in _KINDS.items()}
# parameters that change how a model is trained but not what it is
_RUNTIME_PARAMS = {"n_jobs"}


class ModelFileError(ValueError):
    pass


class ModelFormatError(ModelFileError):
    pass


class TruncatedModelError(ModelFormatError):
    pass


class ModelVersionError(ModelFileError):
    pass


class SchemaMismatchError(ModelFileError):
    pass


class NonFiniteValueError(ModelFileError):
    pass


def _real(x):
    x = float(x)
    if not math.isfinite(x):
        raise NonFiniteValueError(f"refusing to write non-finite value {x!r}")
    return repr(x)


def _param(value):
    if value is None or isinstance(value, bool):
        return str(value)
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return _real(value)
    raise TypeError(f"cannot serialize parameter value {value!r}")


def _tree_lines(tree):
    lines = [f"nodes = {tree.n_nodes}"]
    for i in range(tree.n_nodes):
        if tree.feature[i] == LEAF:
            lines.append(f"leaf {_real(tree.value[i])}")
        else:
            lines.append(
                f"split {tree.feature[i]} {_real(tree.threshold[i])} {tree.left[i]} {tree.right[i]}"
            )
    return lines


def _vector(values):
    return " ".join(_real(v) for v in values)


def dumps(model, labels=LABELS, feature_names=FEATURE_NAMES):
    """Serialize a fitted estimator to text."""
    kind = _KINDS.get(type(model))
    if kind is None:
        raise TypeError(f"unsupported model type {type(model).__name__}")
    classes = np.asarray(model.classes_)
    if not np.issubdtype(classes.dtype, np.integer):
        raise TypeError("models must be fitted on integer label indices to be saved")
    params = {k: v for k, v in sorted(model.get_params().items()) if k not in _RUNTIME_PARAMS}
    header = [
        MAGIC,
        f"format_version = {FORMAT_VERSION}",
        f"model_kind = {kind}",
        f"feature_schema = {schema_hash(feature_names)}",
        f"n_features = {model.n_features_in_}",
        f"labels = {','.join(labels)}",
        f"classes = {','.join(str(int(c)) for c in classes)}",
        f"seed = {_param(params.get('seed'))}",
    ]
    header += [f"param.{k} = {_param(v)}" for k, v in params.items()]

    sections = []
    if kind == "dt":
        sections.append(["tree 0"] + _tree_lines(model.tree_))
    elif kind == "rf":
        header.append(f"n_trees = {len(model.trees_)}")
        for t, tree in enumerate(model.trees_):
            sections.append([f"tree {t}"] + _tree_lines(tree))
    elif kind == "gbt":
        header.append(f"n_rounds = {len(model.rounds_)}")
        header.append(f"base_score = {_vector(model.base_score_)}")
        for r, trees in enumerate(model.rounds_):
            for c, tree in enumerate(trees):
                sections.append([f"round {r} class {c}"] + _tree_lines(tree))
    else:
        sections.append(["mean", _vector(model.mean_)])
        sections.append(["scale", _vector(model.scale_)])
        sections.append(["intercept", _vector(model.intercept_)])
        for c, w in enumerate(model.coef_):
            sections.append([f"coef {c}", _vector(w)])

    lines = header
    for sec in sections:
        lines.append(SEP)
        lines.extend(sec)
    lines += [SEP, "end"]
    return "\n".join(lines) + "\n"


def save(model, destination=None, **kw):
    """Serialize ``model``; write to ``destination`` if given. Returns the bytes."""
    data = dumps(model, **kw).encode("utf-8")
    if destination is not None:
        if hasattr(destination, "write"):
            destination.write(data)
        else:
            with open(destination, "wb") as fh:
                fh.write(data)
    return data


def _parse_real(text, where):
    try:
        x = float(text)
    except ValueError:
        raise ModelFormatError(f"{where}: expected a real number, got {text!r}") from None
    if not math.isfinite(x):
        raise NonFiniteValueError(f"{where}: non-finite value {text!r}")
    return x


def _parse_int(text, where):
    try:
        return int(text)
    except ValueError:
        raise ModelFormatError(f"{where}: expected an integer, got {text!r}") from None


def _parse_param(text, where):
    if text in ("None", "True", "False"):
        return {"None": None, "True": True, "False": False}[text]
    try:
        return int(text)
    except ValueError:
        return _parse_real(text, where)


def _parse_tree(lines, where):
    if not lines or not lines[0].startswith("nodes = "):
        raise ModelFormatError(f"{where}: missing node count")
    n = _parse_int(lines[0][8:], where)
    body = lines[1:]
    if len(body) != n:
        raise TruncatedModelError(f"{where}: expected {n} nodes, found {len(body)}")
    feature, threshold, left, right, value = [], [], [], [], []
    for k, line in enumerate(body):
        parts = line.split()
        loc = f"{where} node {k}"
        if parts[:1] == ["leaf"] and len(parts) == 2:
            feature.append(LEAF)
            threshold.append(0.0)
            left.append(LEAF)
            right.append(LEAF)
            value.append(_parse_real(parts[1], loc))
        elif parts[:1] == ["split"] and len(parts) == 5:
            feature.append(_parse_int(parts[1], loc))
            threshold.append(_parse_real(parts[2], loc))
            l, r = _parse_int(parts[3], loc), _parse_int(parts[4], loc)
            if not (k < l < n and k < r < n):
                raise ModelFormatError(f"{loc}: child index out of range")
            left.append(l)
            right.append(r)
            value.append(0.0)
        else:
            raise ModelFormatError(f"{loc}: malformed node line {line!r}")
    return Tree(feature, threshold, left, right, value)


def _parse_vector(lines, where, length=None):
    if len(lines) != 1:
        raise ModelFormatError(f"{where}: expected one line of values")
    vec = np.array([_parse_real(t, where) for t in lines[0].split()], dtype=np.float64)
    if length is not None and len(vec) != length:
        raise ModelFormatError(f"{where}: expected {length} values, found {len(vec)}")
    return vec


def loads(text, feature_names=FEATURE_NAMES):
    """Rebuild a model from text produced by :func:`dumps`."""
    lines = text.split("\n")
    if lines[0] != MAGIC:
        raise ModelFormatError(f"bad magic line {lines[0][:40]!r}, expected {MAGIC!r}")
    if lines[-1] == "":
        lines.pop()
    if not lines or lines[-1] != "end" or len(lines) < 2 or lines[-2] != SEP:
        raise TruncatedModelError("model file does not end with the end marker")
    lines = lines[:-2]

    header = {}
    pos = 1
    while pos < len(lines) and lines[pos] != SEP:
        key, eq, value = lines[pos].partition(" = ")
        if not eq:
            raise ModelFormatError(f"line {pos + 1}: malformed header line {lines[pos]!r}")
        header[key] = value
        pos += 1
    for key in ("format_version", "model_kind", "feature_schema", "labels", "classes", "n_features"):
        if key not in header:
            raise ModelFormatError(f"header is missing {key!r}")
    version = _parse_int(header["format_version"], "format_version")
    if version != FORMAT_VERSION:
        raise ModelVersionError(f"unsupported format_version {version}; this build reads {FORMAT_VERSION}")
    expected = schema_hash(feature_names)
    if header["feature_schema"] != expected:
        raise SchemaMismatchError(
            f"feature schema mismatch: file has {header['feature_schema']}, expected {expected}"
        )
    kind = header["model_kind"]
    if kind not in _CLASSES:
        raise ModelFormatError(f"unknown model_kind {kind!r}")

    sections = []
    cur = None
    for line in lines[pos:]:
        if line == SEP:
            cur = []
            sections.append(cur)
        else:
            cur.append(line)
    sections = [(s[0], s[1:]) for s in sections if s] if all(sections) else None
    if sections is None:
        raise ModelFormatError("empty section")

    params = {
        k[6:]: _parse_param(v, k) for k, v in header.items() if k.startswith("param.")
    }
    model = _CLASSES[kind](**params)
    model.classes_ = np.array([_parse_int(c, "classes") for c in header["classes"].split(",")])
    model.n_features_in_ = _parse_int(header["n_features"], "n_features")
    model.labels_ = tuple(header["labels"].split(","))
    K = len(model.classes_)

    if kind == "dt":
        if len(sections) != 1:
            raise ModelFormatError("dt model must have exactly one tree section")
        model.tree_ = _parse_tree(sections[0][1], sections[0][0])
    elif kind == "rf":
        n = _parse_int(header.get("n_trees", ""), "n_trees")
        if len(sections) != n:
            raise TruncatedModelError(f"expected {n} tree sections, found {len(sections)}")
        model.trees_ = [_parse_tree(body, title) for title, body in sections]
    elif kind == "gbt":
        n = _parse_int(header.get("n_rounds", ""), "n_rounds")
        if len(sections) != n * K:
            raise TruncatedModelError(f"expected {n * K} tree sections, found {len(sections)}")
        model.base_score_ = _parse_vector([header.get("base_score", "")], "base_score", K)
        trees = [_parse_tree(body, title) for title, body in sections]
        model.rounds_ = [trees[r * K:(r + 1) * K] for r in range(n)]
    else:
        named = dict(sections)
        d = model.n_features_in_
        try:
            model.mean_ = _parse_vector(named["mean"], "mean", d)
            model.scale_ = _parse_vector(named["scale"], "scale", d)
            model.intercept_ = _parse_vector(named["intercept"], "intercept", K)
            model.coef_ = np.array([_parse_vector(named[f"coef {c}"], f"coef {c}", d) for c in range(K)])
        except KeyError as exc:
            raise TruncatedModelError(f"missing section {exc.args[0]!r}") from None
    return model


def load(source, **kw):
    """Load a model from a path, bytes, or a binary file object."""
    if isinstance(source, (bytes, bytearray)):
        data = bytes(source)
    elif hasattr(source, "read"):
        data = source.read()
    else:
        with open(os.fspath(source), "rb") as fh:
            data = fh.read()
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ModelFormatError(f"model file is not UTF-8: {exc}") from None
    return loads(text, **kw)
