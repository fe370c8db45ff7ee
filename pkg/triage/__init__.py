"""Case triage for a prosecutor's office: ranking, prescription screening and RCT cohorts."""

__version__ = "1.0.0"
