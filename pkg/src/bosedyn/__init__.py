"""Mean-field, Bogoliubov and exact few-body dynamics of interacting bosons."""

__version__ = "0.1.0"
