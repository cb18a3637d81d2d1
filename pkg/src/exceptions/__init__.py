from .exceptions import (
    PGSError, ConfigError,
    ConvexAnalysisError, UnboundedConjugate, InfiniteValue, NotConvex,
    ModelError, NonpositiveEnergy, ConjugateOverflow, DimensionMismatch,
    EllipticityViolated, CoercivityViolated, CoefficientRelationViolated, PeriodicityViolated,
    SolverError, InvalidMinimizeSpec, NonFiniteObjective, MaxItersExceeded,
    SchemeError, SumRuleViolated, EnergyBlowup, QuadratureUnderResolved,
    HomogenizationError, SingularInverse, TabulationGapTooCoarse,
    ExperimentError, ResolutionRuleViolated, InvalidSweepPlan,
)

__all__ = [
    'PGSError', 'ConfigError',
    'ConvexAnalysisError', 'UnboundedConjugate', 'InfiniteValue', 'NotConvex',
    'ModelError', 'NonpositiveEnergy', 'ConjugateOverflow', 'DimensionMismatch',
    'EllipticityViolated', 'CoercivityViolated', 'CoefficientRelationViolated', 'PeriodicityViolated',
    'SolverError', 'InvalidMinimizeSpec', 'NonFiniteObjective', 'MaxItersExceeded',
    'SchemeError', 'SumRuleViolated', 'EnergyBlowup', 'QuadratureUnderResolved',
    'HomogenizationError', 'SingularInverse', 'TabulationGapTooCoarse',
    'ExperimentError', 'ResolutionRuleViolated', 'InvalidSweepPlan',
]
