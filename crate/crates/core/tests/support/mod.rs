pub mod audit_fixture;
pub mod instances;
pub mod oracle;
