"""
异常层级

所有异常都继承 AdvDefError，并带有机器可读的 code，CLI 据此输出错误行。
"""


class AdvDefError(Exception):
    """项目异常基类"""

    code = "advdef_error"

    def to_record(self):
        """
        转换为机器可读的错误记录

        Returns:
            dict: {'error': code, 'message': 文本}
        """
        return {'error': self.code, 'message': str(self)}


class ShapeError(AdvDefError, ValueError):
    """形状或维度不匹配"""

    code = "shape_error"


class DomainError(AdvDefError, ValueError):
    """数值定义域错误（非正数取对数、除零、非法区间等）"""

    code = "domain_error"


class TapeError(AdvDefError):
    """梯度带相关错误"""

    code = "tape_error"


class FormatError(AdvDefError):
    """文件格式解析错误"""

    code = "format_error"


class ConfigError(AdvDefError):
    """配置错误"""

    code = "config_error"


class DefenseError(AdvDefError):
    """防御变换链执行失败"""

    code = "defense_error"

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index
