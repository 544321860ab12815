"""Testing toolkit for backend-for-frontend (BFF) microservice systems.

Fuzzes a BFF's REST API from its OpenAPI specification, records the traffic
the BFF fans out to its backends, maps each main request onto its
sub-requests, and reports which backend produced errors or leaked exception
details.
"""

__version__ = "0.1.0"
