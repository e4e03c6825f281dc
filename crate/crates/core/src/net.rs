//! Small CIDR prefix type for resolver and traceroute address matching.

use std::net::IpAddr;
use std::str::FromStr;

use crate::error::Error;

/// An IPv4 or IPv6 prefix in CIDR notation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IpPrefix {
    addr: u128,
    len: u8,
    v4: bool,
}

fn widen(ip: IpAddr) -> (u128, bool) {
    match ip {
        IpAddr::V4(a) => (u32::from(a) as u128, true),
        IpAddr::V6(a) => (u128::from(a), false),
    }
}

impl IpPrefix {
    pub fn new(ip: IpAddr, len: u8) -> Option<Self> {
        let (addr, v4) = widen(ip);
        let max = if v4 { 32 } else { 128 };
        if len > max {
            return None;
        }
        Some(IpPrefix { addr: addr & Self::mask(len, v4), len, v4 })
    }

    fn mask(len: u8, v4: bool) -> u128 {
        let bits = if v4 { 32 } else { 128 };
        if len == 0 {
            0
        } else {
            (!0u128) << (bits - len as u32) & if v4 { 0xffff_ffff } else { !0 }
        }
    }

    pub fn contains(&self, ip: IpAddr) -> bool {
        let (addr, v4) = widen(ip);
        v4 == self.v4 && addr & Self::mask(self.len, self.v4) == self.addr
    }
}

impl FromStr for IpPrefix {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        let bad = || Error::Config(format!("invalid prefix `{s}`"));
        let (ip, len) = match s.split_once('/') {
            Some((ip, len)) => {
                let ip: IpAddr = ip.parse().map_err(|_| bad())?;
                (ip, len.parse::<u8>().map_err(|_| bad())?)
            }
            None => {
                let ip: IpAddr = s.parse().map_err(|_| bad())?;
                (ip, if ip.is_ipv4() { 32 } else { 128 })
            }
        };
        IpPrefix::new(ip, len).ok_or_else(bad)
    }
}
