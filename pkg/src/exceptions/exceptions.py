class PGSError(Exception):
    """pgslab 기본 예외"""
    pass


class ConfigError(PGSError):
    """설정 검증 실패 (필드 이름 포함)"""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


# --- 볼록 해석 ---

class ConvexAnalysisError(PGSError):
    """볼록 해석 계산 관련 기본 예외"""
    pass


class UnboundedConjugate(ConvexAnalysisError):
    """켤레 함수 값이 overflow 임계값을 넘음 (ξ ∉ dom Ψ*)"""
    pass


class InfiniteValue(ConvexAnalysisError):
    """함수 값이 +∞"""
    pass


class NotConvex(ConvexAnalysisError):
    """볼록성 플래그가 없는 함수에 볼록 전용 연산을 요청"""
    pass


# --- 모델 ---

class ModelError(PGSError):
    """시스템/계수 정의 관련 기본 예외"""
    pass


class NonpositiveEnergy(ModelError):
    """샘플 에너지가 0 이하"""
    pass


class ConjugateOverflow(ModelError):
    """Ψ*_u(B/c) 가 overflow 임계값을 넘음"""
    pass


class DimensionMismatch(ModelError):
    """상태 벡터 차원 불일치"""
    pass


class EllipticityViolated(ModelError):
    """계수 행렬의 균등 타원성 위반"""
    pass


class CoercivityViolated(ModelError):
    """에너지 밀도의 강압성 위반"""
    pass


class CoefficientRelationViolated(ModelError):
    """지수 p, q, r 관계식 위반"""
    pass


class PeriodicityViolated(ModelError):
    """셀 계수의 1-주기성 위반"""
    pass


# --- 최소화 ---

class SolverError(PGSError):
    """내부 최소화 관련 기본 예외"""
    pass


class InvalidMinimizeSpec(SolverError):
    """허용 오차/반복 횟수 설정 오류"""
    pass


class NonFiniteObjective(SolverError):
    """목적 함수가 NaN 또는 -∞ 를 반환"""
    pass


class MaxItersExceeded(SolverError):
    """최대 반복 횟수 초과 (best-so-far 결과 포함)"""

    def __init__(self, message: str, result=None):
        self.result = result
        super().__init__(message)


# --- 시간 이산화 ---

class SchemeError(PGSError):
    """minimizing-movement 스킴 관련 기본 예외"""
    pass


class SumRuleViolated(SchemeError):
    """스텝 해의 합 규칙 인증서가 허용 오차를 넘음"""
    pass


class EnergyBlowup(SchemeError):
    """노드 에너지가 Gronwall 포락선을 넘음"""
    pass


class QuadratureUnderResolved(SchemeError):
    """substeps 를 두 배로 했을 때 적분 값이 크게 변함"""
    pass


# --- 균질화 ---

class HomogenizationError(PGSError):
    """균질화 관련 기본 예외"""
    pass


class SingularInverse(HomogenizationError):
    """셀 계수 행렬이 수치적으로 특이"""
    pass


class TabulationGapTooCoarse(HomogenizationError):
    """F_hom 표 보간 오차가 허용 오차를 넘음"""
    pass


# --- 실험 ---

class ExperimentError(PGSError):
    """스윕 실험 관련 기본 예외"""
    pass


class ResolutionRuleViolated(ExperimentError):
    """h ≤ ε/16 해상도 규칙 위반"""
    pass


class InvalidSweepPlan(ExperimentError):
    """파라미터 목록이 단조가 아니거나 너무 짧음"""
    pass
