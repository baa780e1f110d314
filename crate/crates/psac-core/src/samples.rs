//! Bundled banking specifications used by the simulator and tests.

use crate::parse::parse_specs;
use crate::spec::SpecSet;

/// A current account: open with a non-negative deposit, withdrawals must not
/// overdraw, deposits must be positive, interest credits 10%.
pub const ACCOUNT_SOURCE: &str = r#"
class Account
  accountNumber: Iban @identity
  balance: Money

  initial init
    on Open(initialDeposit: Money): opened
      pre: initialDeposit >= EUR(0.00)
      post: this.balance == initialDeposit

  opened
    on Withdraw(amount: Money): opened
      pre: amount > EUR(0.00), balance - amount >= EUR(0.00)
      post: this.balance == balance - amount
    on Deposit(amount: Money): opened
      pre: amount > EUR(0.00)
      post: this.balance == balance + amount
    on Interest(): opened
      post: this.balance == scale(balance, 11, 10)
    on Close(): closed

  final closed
"#;

/// A money transfer books by synchronizing a withdrawal and a deposit on the
/// two accounts; the transfer commits only if both do.
pub const MONEY_TRANSFER_SOURCE: &str = r#"
class MoneyTransfer
  transferId: Id @identity

  initial init
    on Book(amount: Money, from: Account, to: Account): booked
      sync:
        from.Withdraw(amount)
        to.Deposit(amount)

  final booked
"#;

/// Both banking specs, parsed and registered. Panics only if the embedded
/// sources are invalid, which the test suite rules out.
pub fn bank_specs() -> SpecSet {
    let mut specs = parse_specs(ACCOUNT_SOURCE).expect("bundled Account source parses");
    specs.extend(parse_specs(MONEY_TRANSFER_SOURCE).expect("bundled MoneyTransfer source parses"));
    let set = SpecSet::new(specs);
    debug_assert!(set.validate().is_empty());
    set
}
