"""Portable tree-model documents: a strict PMML 4.2 TreeModel subset.

The writer emits exactly the elements of the subset grammar; the reader
rejects anything outside it by construct name, so a document that loads
here scores identically everywhere the subset is implemented.

Evaluation semantics pinned by the format: child predicates are tried
in order; an unknown (missing-value) predicate routes to the node's
``defaultChild``; if no child predicate matches, the node's own score
is returned (``noTrueChildStrategy="returnLastPrediction"``).
"""

from __future__ import annotations

import xml.etree.ElementTree as ET
from typing import Optional

from .trees import TRUE_PREDICATE, Node, Predicate, RegressionTree

PMML_NAMESPACE = "http://www.dmg.org/PMML-4_2"
PMML_VERSION = "4.2"

ALLOWED_ELEMENTS = frozenset({
    "PMML", "Header", "DataDictionary", "DataField", "TreeModel", "Node",
    "SimplePredicate", "SimpleSetPredicate", "True", "Array",
})
ALLOWED_OPERATORS = frozenset({"lessOrEqual", "greaterThan", "equal"})
PREDICATE_TAGS = frozenset({"SimplePredicate", "SimpleSetPredicate", "True"})


class PmmlError(Exception):
    pass


class PmmlParseError(PmmlError):
    """Raised for malformed XML, carrying the (line, column) location."""

    def __init__(self, message: str, position: Optional[tuple[int, int]] = None):
        self.position = position
        if position is not None:
            message = f"{message} (line {position[0]}, column {position[1]})"
        super().__init__(message)


class UnsupportedConstructError(PmmlError):
    def __init__(self, construct: str):
        self.construct = construct
        super().__init__(f"unsupported PMML construct: {construct}")


class PmmlValidationError(PmmlError):
    pass


def _fmt(value: float) -> str:
    # repr round-trips float64 exactly, which the codec contract relies on
    return repr(float(value))


def _quote_token(token: str) -> str:
    if token == "" or any(ch.isspace() for ch in token) or '"' in token:
        return '"' + token.replace('"', '\\"') + '"'
    return token


def _split_tokens(text: str) -> list[str]:
    tokens = []
    i, n = 0, len(text)
    while i < n:
        if text[i].isspace():
            i += 1
            continue
        if text[i] == '"':
            i += 1
            buf = []
            while i < n and text[i] != '"':
                if text[i] == "\\" and i + 1 < n and text[i + 1] == '"':
                    buf.append('"')
                    i += 2
                else:
                    buf.append(text[i])
                    i += 1
            i += 1  # closing quote
            tokens.append("".join(buf))
        else:
            j = i
            while j < n and not text[j].isspace():
                j += 1
            tokens.append(text[i:j])
            i = j
    return tokens


# --- writer ---------------------------------------------------------------


def to_pmml(tree: RegressionTree, manifest=None) -> str:
    """Serialize a regression tree to its portable XML document."""
    root = ET.Element("PMML", {"xmlns": PMML_NAMESPACE, "version": PMML_VERSION})
    description = "slatelab regression tree"
    if manifest is not None:
        description = (f"model_id={manifest.model_id} "
                       f"version={manifest.version} target={manifest.target}")
    ET.SubElement(root, "Header",
                  {"copyright": "slatelab", "description": description})

    # the DataDictionary lists exactly the model's input fields; the
    # regression target is carried as TreeModel@modelName metadata so a
    # target that shares a name with a feature cannot shadow it
    dictionary = ET.SubElement(root, "DataDictionary")
    for name, kind in tree.feature_schema:
        data_type = "string" if kind == "categorical" else "double"
        ET.SubElement(dictionary, "DataField",
                      {"name": name, "optype": kind, "dataType": data_type})
    dictionary.set("numberOfFields", str(len(tree.feature_schema)))

    model = ET.SubElement(root, "TreeModel", {
        "modelName": tree.target_name,
        "functionName": "regression",
        "missingValueStrategy": "defaultChild",
        "noTrueChildStrategy": "returnLastPrediction",
    })
    counter = [0]
    _write_node(model, tree.root, TRUE_PREDICATE, counter)

    ET.indent(root)
    return ('<?xml version="1.0" encoding="UTF-8"?>\n'
            + ET.tostring(root, encoding="unicode") + "\n")


def _write_node(parent: ET.Element, node: Node, predicate: Predicate,
                counter: list[int]) -> str:
    counter[0] += 1
    node_id = str(counter[0])
    attrs = {"id": node_id, "score": _fmt(node.prediction),
             "recordCount": _fmt(node.weight)}
    elem = ET.SubElement(parent, "Node", attrs)
    _write_predicate(elem, predicate)
    if node.children:
        child_ids = [
            _write_node(elem, child, pred, counter)
            for pred, child in node.children
        ]
        elem.set("defaultChild", child_ids[node.default_child])
    return node_id


def _write_predicate(parent: ET.Element, predicate: Predicate) -> None:
    if predicate.kind == "true":
        ET.SubElement(parent, "True")
    elif predicate.kind in ("le", "gt", "eq"):
        operator = {"le": "lessOrEqual", "gt": "greaterThan",
                    "eq": "equal"}[predicate.kind]
        value = (predicate.value if isinstance(predicate.value, str)
                 else _fmt(predicate.value))
        ET.SubElement(parent, "SimplePredicate",
                      {"field": predicate.feature, "operator": operator,
                       "value": value})
    elif predicate.kind == "isin":
        wrapper = ET.SubElement(parent, "SimpleSetPredicate",
                                {"field": predicate.feature,
                                 "booleanOperator": "isIn"})
        array = ET.SubElement(wrapper, "Array", {
            "type": "string", "n": str(len(predicate.categories))})
        array.text = " ".join(_quote_token(c) for c in predicate.categories)
    else:
        raise PmmlError(f"cannot serialize predicate kind {predicate.kind!r}")


# --- reader ---------------------------------------------------------------


def _local(tag: str) -> str:
    return tag.rsplit("}", 1)[-1]


def from_pmml(document: str) -> RegressionTree:
    """Parse a portable document back into a regression tree.

    Anything outside the subset grammar raises
    UnsupportedConstructError naming the offending construct.
    """
    try:
        root = ET.fromstring(document)
    except ET.ParseError as exc:
        raise PmmlParseError(f"malformed XML: {exc.msg}",
                             getattr(exc, "position", None)) from None

    if _local(root.tag) != "PMML":
        raise PmmlValidationError(f"root element is {_local(root.tag)!r}, "
                                  "expected PMML")
    _reject_unknown_elements(root)

    dictionary = _find_child(root, "DataDictionary")
    if dictionary is None:
        raise PmmlValidationError("missing DataDictionary")
    fields: dict[str, str] = {}
    for data_field in dictionary:
        if _local(data_field.tag) != "DataField":
            continue
        name = data_field.get("name")
        optype = data_field.get("optype")
        if not name:
            raise PmmlValidationError("DataField without a name")
        if optype not in ("continuous", "categorical"):
            raise UnsupportedConstructError(f"DataField optype '{optype}'")
        fields[name] = optype

    models = [el for el in root if _local(el.tag) == "TreeModel"]
    if not models:
        raise PmmlValidationError("document contains no TreeModel")
    if len(models) > 1:
        raise UnsupportedConstructError("multiple TreeModel elements")
    model = models[0]
    function = model.get("functionName")
    if function != "regression":
        raise UnsupportedConstructError(f"TreeModel functionName '{function}'")
    for attr, required in (("missingValueStrategy", "defaultChild"),
                           ("noTrueChildStrategy", "returnLastPrediction")):
        value = model.get(attr, required)
        if value != required:
            raise UnsupportedConstructError(f"TreeModel {attr} '{value}'")

    target_name = model.get("modelName") or "target"
    schema = tuple(fields.items())
    schema_kinds = dict(schema)

    root_nodes = [el for el in model if _local(el.tag) == "Node"]
    if len(root_nodes) != 1:
        raise PmmlValidationError(
            f"TreeModel must contain exactly one root Node, found "
            f"{len(root_nodes)}")
    tree_root = _read_node(root_nodes[0], schema_kinds, is_root=True)
    return RegressionTree(root=tree_root, target_name=target_name,
                          feature_schema=schema)


def _reject_unknown_elements(root: ET.Element) -> None:
    for elem in root.iter():
        tag = _local(elem.tag)
        if tag not in ALLOWED_ELEMENTS:
            raise UnsupportedConstructError(tag)


def _find_child(parent: ET.Element, tag: str) -> Optional[ET.Element]:
    for child in parent:
        if _local(child.tag) == tag:
            return child
    return None


def _read_node(elem: ET.Element, schema_kinds: dict[str, str],
               is_root: bool = False) -> Node:
    score = elem.get("score")
    if score is None:
        raise PmmlValidationError("Node without a score")
    try:
        prediction = float(score)
    except ValueError:
        raise PmmlValidationError(f"non-numeric score {score!r}") from None
    try:
        weight = float(elem.get("recordCount", "0"))
    except ValueError:
        raise PmmlValidationError("non-numeric recordCount") from None

    predicate = None
    child_nodes: list[tuple[ET.Element, str]] = []
    for child in elem:
        tag = _local(child.tag)
        if tag in PREDICATE_TAGS:
            if predicate is not None:
                raise PmmlValidationError("Node with multiple predicates")
            predicate = _read_predicate(child, schema_kinds)
        elif tag == "Node":
            child_id = child.get("id")
            child_nodes.append((child, child_id))

    if predicate is None and not is_root:
        raise PmmlValidationError("non-root Node without a predicate")

    node = Node(prediction=prediction, weight=weight)
    if child_nodes:
        if len(child_nodes) != 2:
            raise PmmlValidationError(
                f"Node must have exactly 0 or 2 child Nodes, found "
                f"{len(child_nodes)}")
        parsed = []
        for child_elem, _ in child_nodes:
            child_pred = _read_child_predicate(child_elem, schema_kinds)
            parsed.append((child_pred, _read_node(child_elem, schema_kinds)))
        node.children = tuple(parsed)
        default = elem.get("defaultChild")
        if default is not None:
            ids = [cid for _, cid in child_nodes]
            if default not in ids:
                raise PmmlValidationError(
                    f"defaultChild {default!r} does not reference a child id")
            node.default_child = ids.index(default)
    return node


def _read_child_predicate(elem: ET.Element, schema_kinds: dict) -> Predicate:
    for child in elem:
        if _local(child.tag) in PREDICATE_TAGS:
            return _read_predicate(child, schema_kinds)
    raise PmmlValidationError("child Node without a predicate")


def _read_predicate(elem: ET.Element, schema_kinds: dict) -> Predicate:
    tag = _local(elem.tag)
    if tag == "True":
        return TRUE_PREDICATE
    field = elem.get("field")
    if not field:
        raise PmmlValidationError(f"{tag} without a field")
    if field not in schema_kinds:
        raise PmmlValidationError(
            f"predicate references undeclared field {field!r}")
    if tag == "SimplePredicate":
        operator = elem.get("operator")
        if operator not in ALLOWED_OPERATORS:
            raise UnsupportedConstructError(
                f"SimplePredicate operator '{operator}'")
        raw = elem.get("value")
        if raw is None:
            raise PmmlValidationError("SimplePredicate without a value")
        if schema_kinds[field] == "continuous":
            try:
                value = float(raw)
            except ValueError:
                raise PmmlValidationError(
                    f"non-numeric value {raw!r} for continuous field "
                    f"{field!r}") from None
        else:
            if operator != "equal":
                raise PmmlValidationError(
                    f"operator {operator!r} on categorical field {field!r}")
            value = raw
        kind = {"lessOrEqual": "le", "greaterThan": "gt",
                "equal": "eq"}[operator]
        return Predicate(kind, field, value)
    # SimpleSetPredicate
    boolean_op = elem.get("booleanOperator")
    if boolean_op != "isIn":
        raise UnsupportedConstructError(
            f"SimpleSetPredicate booleanOperator '{boolean_op}'")
    array = _find_child(elem, "Array")
    if array is None:
        raise PmmlValidationError("SimpleSetPredicate without an Array")
    array_type = array.get("type", "string")
    if array_type != "string":
        raise UnsupportedConstructError(f"Array type '{array_type}'")
    tokens = _split_tokens(array.text or "")
    declared = array.get("n")
    if declared is not None and int(declared) != len(tokens):
        raise PmmlValidationError(
            f"Array declares n={declared} but holds {len(tokens)} values")
    return Predicate("isin", field, categories=tuple(tokens))
