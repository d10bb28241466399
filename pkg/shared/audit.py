from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional


@dataclass
class AuditResult:
    """Outcome of one named check"""
    audit_name: str
    passed: bool
    value: Optional[float] = None
    threshold: Optional[float] = None
    detail: Optional[str] = None
    location: Optional[Dict[str, Any]] = None
    execution_time: Optional[float] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "audit_name": self.audit_name,
            "passed": self.passed,
            "value": self.value,
            "threshold": self.threshold,
            "detail": self.detail,
            "location": self.location,
        }


@dataclass
class AuditLog:
    """Ordered collection of audit results for a run"""
    results: List[AuditResult] = field(default_factory=list)

    def add(self, result: AuditResult) -> AuditResult:
        self.results.append(result)
        return result

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    def failures(self) -> List[AuditResult]:
        return [r for r in self.results if not r.passed]

    def to_records(self) -> List[Dict[str, Any]]:
        return [r.to_dict() for r in self.results]
