"""Reading and writing instance files.

An instance file is YAML with the top-level keys ``arms``, ``default``,
``seed`` and ``name``::

    seed: 7                      # optional
    default: {family: point, params: {value: 0.0}}   # optional, PointMass(0)
    arms:
      - {family: two_point, params: {x_minus: -1, x_plus: 1, p_plus: 0.6}}
      - {family: discrete, params: {values: [-1, 2], probs: [0.5, 0.5]}}
      - {family: gaussian, params: {mean: 2.0, sigma: 1.0}}

Every error names the 1-based line of the offending node.
"""

from __future__ import annotations

import dataclasses
from pathlib import Path
from typing import IO

import yaml

from mirgmdp.errors import ConfigurationError, InstanceFormatError
from mirgmdp.priors import FAMILIES, MEAN_GAP_TOLERANCE, Instance, RewardPrior

TOP_LEVEL_KEYS = ("arms", "default", "seed", "name")


def _line(node: yaml.Node) -> int:
    return node.start_mark.line + 1


def _mapping(node: yaml.Node, what: str) -> dict[str, yaml.Node]:
    if not isinstance(node, yaml.MappingNode):
        raise InstanceFormatError(f"{what} must be a mapping", _line(node))
    out: dict[str, yaml.Node] = {}
    for key, value in node.value:
        if not isinstance(key, yaml.ScalarNode):
            raise InstanceFormatError(f"{what} keys must be plain names", _line(key))
        if key.value in out:
            raise InstanceFormatError(f"duplicate key {key.value!r} in {what}", _line(key))
        out[key.value] = value
    return out


def _plain(node: yaml.Node):
    """Python value of a scalar or a sequence of scalars."""
    return yaml.safe_load(yaml.serialize(node))


def _number(node: yaml.Node, what: str) -> float:
    value = _plain(node)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise InstanceFormatError(f"{what} must be a number, got {node.value!r}", _line(node))
    return float(value)


def _numbers(node: yaml.Node, what: str) -> tuple[float, ...]:
    if not isinstance(node, yaml.SequenceNode):
        raise InstanceFormatError(f"{what} must be a list of numbers", _line(node))
    return tuple(_number(item, what) for item in node.value)


def _prior(node: yaml.Node, what: str) -> RewardPrior:
    fields = _mapping(node, what)
    if "family" not in fields:
        raise InstanceFormatError(f"{what} has no 'family'", _line(node))
    family = _plain(fields["family"])
    cls = FAMILIES.get(family) if isinstance(family, str) else None
    if cls is None:
        raise InstanceFormatError(
            f"unknown family {family!r} in {what}; choose from {sorted(FAMILIES)}",
            _line(fields["family"]))
    extra = set(fields) - {"family", "params"}
    if extra:
        raise InstanceFormatError(f"unexpected keys {sorted(extra)} in {what}", _line(node))
    params_node = fields.get("params")
    if params_node is None:
        raise InstanceFormatError(f"{what} has no 'params'", _line(node))
    params = _mapping(params_node, f"params of {what}")
    expected = {f.name for f in dataclasses.fields(cls) if f.init}
    unknown = set(params) - expected
    if unknown:
        raise InstanceFormatError(
            f"unknown parameters {sorted(unknown)} for family {family!r}", _line(params_node))
    missing = {name for name in expected if name not in params}
    if cls.family == "gaussian":
        missing.discard("sigma")
    if missing:
        raise InstanceFormatError(
            f"missing parameters {sorted(missing)} for family {family!r}", _line(params_node))
    kwargs = {}
    for name, value in params.items():
        if name in ("values", "probs"):
            kwargs[name] = _numbers(value, name)
        else:
            kwargs[name] = _number(value, name)
    try:
        return cls(**kwargs)
    except ConfigurationError as exc:
        raise InstanceFormatError(f"{what}: {exc}", _line(node)) from exc


def parse_instance(text: str, name: str = "") -> Instance:
    """Build an instance from YAML text.

    Raises:
        InstanceFormatError: On malformed YAML, unknown families or bad
            parameters, with the line of the offending node.
    """
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.MarkedYAMLError as exc:
        line = exc.problem_mark.line + 1 if exc.problem_mark is not None else None
        raise InstanceFormatError(f"invalid YAML: {exc.problem}", line) from exc
    if root is None:
        raise InstanceFormatError("empty instance file", 1)
    fields = _mapping(root, "instance")
    unknown = set(fields) - set(TOP_LEVEL_KEYS)
    if unknown:
        key = sorted(unknown)[0]
        raise InstanceFormatError(f"unknown top-level key {key!r}", _line(fields[key]))
    if "arms" not in fields:
        raise InstanceFormatError("instance has no 'arms'", _line(root))
    arms_node = fields["arms"]
    if not isinstance(arms_node, yaml.SequenceNode) or not arms_node.value:
        raise InstanceFormatError("'arms' must be a non-empty list", _line(arms_node))
    arms = tuple(_prior(node, f"arm {k}") for k, node in enumerate(arms_node.value))
    kwargs = {}
    if "default" in fields:
        kwargs["default"] = _prior(fields["default"], "default")
    seed = None
    if "seed" in fields:
        seed = _plain(fields["seed"])
        if isinstance(seed, bool) or not isinstance(seed, int):
            raise InstanceFormatError("'seed' must be an integer", _line(fields["seed"]))
    if "name" in fields:
        name = str(_plain(fields["name"]))
    threshold = kwargs.get("default", Instance.__dataclass_fields__["default"].default).mean
    for k, (arm, node) in enumerate(zip(arms, arms_node.value)):
        if abs(arm.mean - threshold) < MEAN_GAP_TOLERANCE:
            raise InstanceFormatError(
                f"arm {k} has mean {arm.mean} equal to the threshold {threshold}", _line(node))
    try:
        return Instance(arms, seed=seed, name=name, **kwargs)
    except ConfigurationError as exc:
        raise InstanceFormatError(str(exc), _line(root)) from exc


def load_instance(path: str | Path) -> Instance:
    """Read an instance file; the file stem becomes the default name."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read instance file {path}: {exc.strerror}") from exc
    return parse_instance(text, name=path.stem)


def _prior_dict(prior: RewardPrior) -> dict:
    return {"family": prior.family, "params": prior.params()}


def dump_instance(instance: Instance, fh: IO[str] | None = None) -> str:
    """YAML text that :func:`parse_instance` reads back to an equal instance."""
    doc = {"arms": [_prior_dict(a) for a in instance.arms],
           "default": _prior_dict(instance.default)}
    if instance.seed is not None:
        doc["seed"] = int(instance.seed)
    if instance.name:
        doc["name"] = instance.name
    text = yaml.safe_dump(doc, sort_keys=False, default_flow_style=None)
    if fh is not None:
        fh.write(text)
    return text
