use super::{RuleDatabase, RuleStatus, RulesError};

/// Occurrences at which a predicted or novel rule becomes characterised.
pub const PROMOTION_THRESHOLD: u32 = 2;

impl RuleDatabase {
    /// Record one more occurrence of a rule, promoting it once repeated.
    pub fn promote_in_place(&mut self, rule_id: &str) -> Result<RuleStatus, RulesError> {
        let seq = self.provenance.len() as u64 + 1;
        let r = self
            .rules
            .get_mut(rule_id)
            .ok_or_else(|| RulesError::UnknownRule(rule_id.into()))?;
        let from = r.status;
        r.occurrences += 1;
        if r.occurrences >= PROMOTION_THRESHOLD {
            r.status = RuleStatus::Characterised;
        }
        self.provenance.push(super::PromotionEvent {
            seq,
            rule_id: rule_id.into(),
            occurrences: r.occurrences,
            from,
            to: r.status,
        });
        Ok(r.status)
    }
}

/// Copy-on-write promotion: the input snapshot is untouched.
pub fn promote(db: &RuleDatabase, rule_id: &str) -> Result<RuleDatabase, RulesError> {
    let mut next = db.clone();
    next.promote_in_place(rule_id)?;
    Ok(next)
}
