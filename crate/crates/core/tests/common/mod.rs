pub mod sig_oracle;
