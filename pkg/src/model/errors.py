from typing import List, Optional, Sequence


class LabError(Exception):
    """实验室异常基类"""


class GridError(LabError):
    """网格参数非法"""


class ConvexityError(LabError):
    """权函数不满足凸性"""

    def __init__(self, message: str, nodes: Optional[Sequence[int]] = None):
        self.nodes: List[int] = list(nodes or [])
        if self.nodes:
            shown = ', '.join(str(i) for i in self.nodes[:10])
            more = '' if len(self.nodes) <= 10 else f' (+{len(self.nodes) - 10})'
            message = f"{message}: nodes [{shown}]{more}"
        super().__init__(message)


class IntegrabilityError(LabError):
    """e^{-tau} 不可积"""


class SlopeMismatchError(LabError):
    """端点斜率不一致"""

    def __init__(self, detail: str = ""):
        message = "slope mismatch"
        if detail:
            message = f"{message}: {detail}"
        super().__init__(message)


class SolverDivergenceError(LabError):
    """牛顿迭代发散"""

    def __init__(self, message: str, trace: Optional[Sequence[float]] = None):
        self.trace: List[float] = list(trace or [])
        if self.trace:
            message = f"{message} (last residual {self.trace[-1]:.3e}, {len(self.trace)} iterations)"
        super().__init__(message)


class GaugeError(LabError):
    """缺少规范条件"""

    def __init__(self, detail: str = ""):
        message = "singular Jacobian, supply gauge"
        if detail:
            message = f"{message}: {detail}"
        super().__init__(message)


class ConfigError(LabError):
    """实验配置错误"""
