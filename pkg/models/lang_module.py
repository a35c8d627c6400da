"""
Shared-parameter registry of objective heads

A LangModule starts from one body. Every registered objective either gets a
fresh head or brings its own module, which is merged into the unified storage:
parameters equal by name, shape and bit pattern become references to the
stored parameter, everything else is kept under a head-scoped name.
"""
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Dict, List, Optional, Tuple

import numpy as np
from loguru import logger

from backend.rng import RngStreams
from backend.tensor import Parameter
from data.vocab import Vocab
from models.transformer import Body, Head, HeadKind, count_parameters, init_head
from utils.errors import CompatibilityError, RegistrationError, RoutingError

if TYPE_CHECKING:
    from objectives.base import Objective

SHARED = 'shared'

log = logger.bind(source="lang_module")


@dataclass
class MergeReport:
    """Outcome of merging one module into the unified storage"""
    shared_names: List[str] = field(default_factory=list)
    distinct_names: List[str] = field(default_factory=list)
    warnings: List[str] = field(default_factory=list)
    before_count: int = 0
    after_count: int = 0
    renamed: Dict[str, str] = field(default_factory=dict)

    @property
    def saved_count(self) -> int:
        return self.before_count - self.after_count

    def to_dict(self) -> Dict[str, object]:
        return {
            'shared_names': list(self.shared_names),
            'distinct_names': list(self.distinct_names),
            'warnings': list(self.warnings),
            'before_count': self.before_count,
            'after_count': self.after_count,
            'renamed': dict(self.renamed),
        }


def bit_equal(a: Parameter, b: Parameter) -> bool:
    """Same dtype, same shape, same bytes"""
    if a is b:
        return True
    return a.data.dtype == b.data.dtype and a.shape == b.shape and a.data.tobytes() == b.data.tobytes()


def scoped_name(name: str, owner: str) -> str:
    """Head-scoped storage name of a parameter owned by one objective"""
    prefix = f"head.{owner}."
    if name.startswith(prefix):
        return name
    if name.startswith('head.'):
        return prefix + '.'.join(name.split('.')[2:])
    return prefix + name


def merge_shared_parameters(
    base: Dict[str, Parameter],
    incoming: Dict[str, Parameter],
    owner: str = 'merged',
) -> Tuple[MergeReport, Dict[str, Parameter]]:
    """
    Merge a module into storage, sharing parameters equal by name and value

    Args:
        base: Current storage, name -> Parameter (left untouched)
        incoming: Module to merge, name -> Parameter
        owner: Objective id used to scope parameters that cannot be shared

    Returns:
        MergeReport and the unified storage. report.renamed maps every incoming
        name to the storage name it resolves to.
    """
    storage = dict(base)
    report = MergeReport(before_count=count_parameters(base) + sum(p.size for p in incoming.values()))

    for name, param in incoming.items():
        existing = storage.get(name)
        if existing is not None and bit_equal(existing, param):
            report.shared_names.append(name)
            report.renamed[name] = name
            continue
        if existing is not None and existing.shape != param.shape:
            report.warnings.append(f"{name}: shape {param.shape} differs from stored {existing.shape}, kept distinct")

        target = scoped_name(name, owner)
        stored = storage.get(target)
        if stored is not None:
            if not bit_equal(stored, param):
                raise RegistrationError(f"cannot merge {name!r}: scoped name {target!r} already holds different values")
            report.shared_names.append(name)
            report.renamed[name] = target
            continue
        param.name = target
        storage[target] = param
        report.distinct_names.append(name)
        report.renamed[name] = target

    report.after_count = count_parameters(storage)
    return report, storage


class LangModule:
    """Body parameters plus one head per registered objective"""

    def __init__(self, body: Body, tokenizer: Optional[Vocab] = None, seed: int = 0):
        self.body = body
        self.config = body.config
        self.tokenizer = tokenizer
        self.streams = RngStreams(seed)
        self.storage: Dict[str, Parameter] = dict(body.params)
        self.heads: Dict[str, Head] = {}
        self.views: Dict[str, Dict[str, Parameter]] = {}
        self.reports: Dict[str, MergeReport] = {}
        self.training = False

    # Registration

    def _expected_output_dim(self, objective: 'Objective') -> int:
        return objective.head_output_dim(self.config.vocab_size)

    def _check_module(self, objective: 'Objective', module: Dict[str, Parameter], output_dim: int) -> None:
        d_model = self.config.d_model
        for name, param in module.items():
            if not name.startswith('head.'):
                expected = self.body.params.get(name)
                if expected is None:
                    raise CompatibilityError(f"{objective.objective_id}: module parameter {name!r} is not part of the body")
                if expected.shape != param.shape:
                    raise CompatibilityError(
                        f"{objective.objective_id}: {name!r} has shape {param.shape}, body expects {expected.shape}"
                    )
                continue
            local = '.'.join(name.split('.')[2:])
            expected_shape = {'proj.weight': (d_model, output_dim), 'proj.bias': (output_dim,)}.get(local)
            if expected_shape is None:
                raise CompatibilityError(f"{objective.objective_id}: unknown head parameter {name!r}")
            if param.shape != expected_shape:
                raise CompatibilityError(
                    f"{objective.objective_id}: {HeadKind(objective.compatible_head).value} head expects "
                    f"{local} of shape {expected_shape}, got {param.shape}"
                )

    def register_objective(self, objective: 'Objective') -> Tuple[str, MergeReport]:
        """
        Attach a head for an objective

        Args:
            objective: Objective exposing objective_id, compatible_head,
                head_output_dim() and optionally objective_module

        Returns:
            Head id (head.<objective_id>) and the MergeReport of its module
        """
        oid = objective.objective_id
        if oid in self.heads:
            raise RegistrationError(f"objective {oid!r} is already registered")
        kind = HeadKind(objective.compatible_head)
        output_dim = self._expected_output_dim(objective)
        labels = getattr(objective, 'head_labels', None)

        module = getattr(objective, 'objective_module', None)
        if module:
            self._check_module(objective, module, output_dim)
            if not any(name.startswith('head.') for name in module):
                fresh = init_head(kind, oid, self.config, output_dim, self.streams, labels)
                module = {**module, **fresh.named_parameters()}
        else:
            module = init_head(kind, oid, self.config, output_dim, self.streams, labels).named_parameters()

        report, self.storage = merge_shared_parameters(self.storage, module, owner=oid)
        view = dict(self.body.params)
        head_params: Dict[str, Parameter] = {}
        for name, target in report.renamed.items():
            if name.startswith('head.'):
                head_params['.'.join(name.split('.')[2:])] = self.storage[target]
            else:
                view[name] = self.storage[target]
        for local, param in head_params.items():
            view[f"head.{oid}.{local}"] = param

        self.heads[oid] = Head(kind, oid, head_params, output_dim, labels)
        self.views[oid] = view
        self.reports[oid] = report
        for warning in report.warnings:
            log.warning(warning)
        log.debug(
            f"registered {oid} ({kind.value}): {len(report.shared_names)} shared, "
            f"{len(report.distinct_names)} distinct parameters"
        )
        return f"head.{oid}", report

    # Routing

    def head_for(self, objective_id: str) -> Head:
        """The head registered for objective_id"""
        try:
            return self.heads[objective_id]
        except KeyError:
            raise RoutingError(f"no head registered for objective {objective_id!r}") from None

    def body_for(self, objective_id: str) -> Body:
        """The body as seen by objective_id (shared parameters are the same objects)"""
        self.head_for(objective_id)
        view = self.views[objective_id]
        params = {name: view[name] for name in self.body.params}
        return Body(self.config, params, self.body.dropout_rng, self.training)

    def objective_parameters(self, objective_id: str) -> Dict[str, Parameter]:
        """Canonical body names plus head.<objective_id>.* of one objective"""
        self.head_for(objective_id)
        return dict(self.views[objective_id])

    def module_copy(self, objective_id: str) -> Dict[str, Parameter]:
        """
        Bit-equal copies of an objective's parameters under their storage names

        Handing this to another objective as its objective_module makes the
        merge share every parameter, head included.
        """
        self.head_for(objective_id)
        copies = {}
        for name, param in self.views[objective_id].items():
            key = param.name if name.startswith('head.') else name
            copies[key] = Parameter(key, np.array(param.data, copy=True), dtype=param.dtype)
        return copies

    # Storage

    @property
    def sharing(self) -> Dict[str, str]:
        """Storage name -> "shared" or the id of the single objective using it"""
        users: Dict[str, List[str]] = {name: [] for name in self.storage}
        for oid, view in self.views.items():
            for param in view.values():
                if oid not in users[param.name]:
                    users[param.name].append(oid)
        return {
            name: SHARED if name in self.body.params or len(owners) != 1 else owners[0]
            for name, owners in users.items()
        }

    def parameters(self) -> List[Parameter]:
        return list(self.storage.values())

    def named_parameters(self) -> Dict[str, Parameter]:
        return dict(self.storage)

    def zero_grad(self) -> None:
        for param in self.storage.values():
            param.grad = None

    def train(self, mode: bool = True) -> 'LangModule':
        self.training = mode
        return self

    def eval(self) -> 'LangModule':
        return self.train(False)

    def count_parameters(self) -> int:
        return count_parameters(self.storage)

    def __contains__(self, objective_id: str) -> bool:
        return objective_id in self.heads

    def __repr__(self) -> str:
        return f"LangModule(objectives={list(self.heads)}, parameters={self.count_parameters()})"
