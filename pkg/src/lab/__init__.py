from .reports import ReportWriter, Manifest
from .runner import LabRunner, EXIT_OK, EXIT_INVARIANT, EXIT_CONFIG
