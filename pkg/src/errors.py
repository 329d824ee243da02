class AgvmError(Exception):
    '''Base class for every error raised by this package'''


class ShapeError(AgvmError, ValueError):
    def __init__(self, primitive, shape_a, shape_b, detail=''):
        self.primitive = primitive
        self.shapes = (tuple(shape_a), tuple(shape_b))
        message = f'{primitive}: incompatible shapes {list(shape_a)} and {list(shape_b)}'
        if detail:
            message += f' ({detail})'
        super().__init__(message)


class TapeError(AgvmError, RuntimeError):
    pass


class ConfigError(AgvmError, ValueError):
    pass


class NonFiniteError(AgvmError, FloatingPointError):
    def __init__(self, what, module=None, iteration=None):
        self.module = module
        self.iteration = iteration
        where = []
        if module is not None:
            where.append(f'module {module!r}')
        if iteration is not None:
            where.append(f'iteration {iteration}')
        suffix = f' in {", ".join(where)}' if where else ''
        super().__init__(f'non-finite {what}{suffix}')


class OutputError(AgvmError, OSError):
    def __init__(self, path, reason):
        self.path = str(path)
        super().__init__(f'cannot write {self.path}: {reason}')
