"""
Pydantic models for run configuration and on-disk record validation
"""

from typing import Dict, List, Optional, Tuple, Union

from pydantic import BaseModel, Field, field_validator, model_validator

from qcap.config import settings


class SamplerConfig(BaseModel):
    """Circuit sampler settings"""
    widths: Tuple[int, int] = Field((1, 4), description="Inclusive range of circuit widths")
    max_depth_by_width: Dict[int, int] = Field(default_factory=lambda: dict(settings.DEPTH_CAPS))
    two_qubit_density_range: Tuple[float, float] = Field(settings.DENSITY_RANGE)
    seed: int = Field(0, ge=0, lt=2 ** 64)

    @field_validator('widths')
    def validate_widths(cls, v):
        if v[0] < 1 or v[1] < v[0]:
            raise ValueError(f'widths must satisfy 1 <= low <= high, got {v}')
        return v

    @field_validator('two_qubit_density_range')
    def validate_density(cls, v):
        low, high = v
        if not (0.0 <= low <= high <= 2.0 / 3.0 + 1e-12):
            raise ValueError(f'two-qubit density range must lie within [0, 2/3], got {v}')
        return v

    @field_validator('max_depth_by_width')
    def validate_caps(cls, v):
        if any(cap < 1 for cap in v.values()):
            raise ValueError('all depth caps must be >= 1')
        return v

    @model_validator(mode='after')
    def validate_caps_cover_widths(self):
        missing = [w for w in range(self.widths[0], self.widths[1] + 1) if w not in self.max_depth_by_width]
        if missing:
            raise ValueError(f'no depth cap for widths {missing}')
        return self

    def depth_cap(self, width: int) -> int:
        return self.max_depth_by_width[width]


class TrainConfig(BaseModel):
    """Optimizer and early-stopping settings"""
    learning_rate: float = Field(settings.LEARNING_RATE, gt=0)
    beta1: float = Field(0.9, gt=0, lt=1)
    beta2: float = Field(0.999, gt=0, lt=1)
    epsilon: float = Field(1e-7, gt=0)
    batch_size: int = Field(settings.BATCH_SIZE, ge=1)
    max_epochs: int = Field(settings.MAX_EPOCHS, ge=1)
    patience: int = Field(settings.PATIENCE, ge=1)
    seed: int = Field(0, ge=0)


class CircuitRow(BaseModel):
    """One line of a circuit JSON-lines file"""
    id: str
    n: int = Field(..., ge=1)
    graph: str
    active_qubits: List[int]
    kind: str
    layers: List[List[Tuple[str, List[int]]]]

    @field_validator('kind')
    def validate_kind(cls, v):
        if v not in ('iid', 'mirror'):
            raise ValueError(f"kind must be 'iid' or 'mirror', got {v}")
        return v


class GeneratorRow(BaseModel):
    kind: str
    pauli: str
    qubits: List[int]
    rate: float

    @field_validator('kind')
    def validate_kind(cls, v):
        if v not in ('H', 'S'):
            raise ValueError(f"kind must be 'H' or 'S', got {v}")
        return v

    @model_validator(mode='after')
    def validate_letters(self):
        if len(self.pauli) != len(self.qubits):
            raise ValueError(f'pauli {self.pauli} does not match qubits {self.qubits}')
        if self.kind == 'S' and self.rate < 0:
            raise ValueError(f'stochastic rate must be nonnegative, got {self.rate}')
        return self


class ErrorModelFile(BaseModel):
    """Error model JSON: gate key -> list of generator rates"""
    n: int = Field(..., ge=1)
    graph: str
    family: str
    gates: Dict[str, List[GeneratorRow]]


class SimulationRow(BaseModel):
    """One line of a simulation output file"""
    id: str
    metric: str
    value: float
    method: str
    shots: Optional[Tuple[int, int]] = None

    @field_validator('metric')
    def validate_metric(cls, v):
        if v not in ('fidelity', 'pst'):
            raise ValueError(f"metric must be 'fidelity' or 'pst', got {v}")
        return v

    @field_validator('method')
    def validate_method(cls, v):
        if v not in ('exact', 'first_order'):
            raise ValueError(f"method must be 'exact' or 'first_order', got {v}")
        return v


class TensorRow(BaseModel):
    I: str
    n: int
    d_max: int
    n_ch: int
    true_depth: int
    M: List[List[int]]


class DatasetHeader(BaseModel):
    """First line of every dataset file"""
    schema_version: int = Field(..., alias='schema')
    format: str = 'qcap-dataset'
    split: str
    graph: str
    hops: int
    max_weight: int
    metric: str
    count: int
    threshold: Optional[float] = None
    seed: Optional[int] = None

    model_config = {'populate_by_name': True}


class DatasetRow(BaseModel):
    """One dataset record (line 2 onward of a dataset file)"""
    id: str
    target: str
    metric: str
    shots: Optional[Tuple[int, int]] = None
    tensor: TensorRow
    perm_keys: Optional[List[str]] = None
    perm: List[List[Union[int, str]]]
    sign: List[List[int]]
    circuit: Optional[CircuitRow] = None

    @field_validator('target')
    def validate_target(cls, v):
        value = float(v)
        if not 0.0 <= value <= 1.0:
            raise ValueError(f'target must lie in [0, 1], got {v}')
        return v


class NetRow(BaseModel):
    error: str
    window: List[int]
    weights: List[List[List[float]]]
    biases: List[List[float]]


class Checkpoint(BaseModel):
    """Serialized physics-aware model"""
    schema_version: int = Field(..., alias='schema')
    metric: str
    graph: str
    hops: int
    max_weight: int
    filter_hops: int
    measurement_filter_hops: int
    n_ch: int
    dense_units: List[int]
    scale: float
    zero_idle_windows: bool = True
    tracked_set: List[str]
    nets: List[NetRow]
    measurement_nets: List[NetRow] = Field(default_factory=list)
    measurement_net_policy: str = 'xy-containing'
    parameter_count: int
    train_history: List[dict] = Field(default_factory=list)

    model_config = {'populate_by_name': True}


class RecordResult(BaseModel):
    id: str
    target: float
    prediction: float
    abs_error: float


class EvalReport(BaseModel):
    """Evaluation report written by the evaluate command"""
    dataset_id: str
    model_id: str
    n_records: int
    mae: float
    pearson_r: Optional[float] = None
    log10_bayes_factor: Optional[float] = None
    compare_id: Optional[str] = None
    clip: float = settings.CLIP
    runtime_seconds: float
    records: List[RecordResult]

    @model_validator(mode='after')
    def validate_counts(self):
        if self.n_records != len(self.records):
            raise ValueError('n_records does not match the record list')
        if self.pearson_r is not None and not -1.0 - 1e-12 <= self.pearson_r <= 1.0 + 1e-12:
            raise ValueError(f'pearson_r out of range: {self.pearson_r}')
        return self
