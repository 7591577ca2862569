from .expr import Expression, parse_expression
from .fields import MatrixField, Surface, VectorField, eval_field, jacobian, sample_jacobian_norm
from .problem import InitialLaw, ProblemSpec, load_problem, problem_from_dict

__all__ = [
    "Expression",
    "InitialLaw",
    "MatrixField",
    "ProblemSpec",
    "Surface",
    "VectorField",
    "eval_field",
    "jacobian",
    "load_problem",
    "parse_expression",
    "problem_from_dict",
    "sample_jacobian_norm",
]
