use hmac::{Hmac, Mac};
use sha2::Sha256;

use super::codec::MAC_LEN;

type HmacSha256 = Hmac<Sha256>;

/// Identity bound to the cluster-shared key used by replication peers.
pub const CLUSTER_IDENTITY: &str = "__cluster";

pub fn sign(secret: &[u8], nonce: &[u8]) -> [u8; MAC_LEN] {
    let mut mac = HmacSha256::new_from_slice(secret).expect("hmac accepts any key length");
    mac.update(nonce);
    mac.finalize().into_bytes().into()
}

/// Constant-time check of a client's response to the HELLO nonce.
pub fn verify(secret: &[u8], nonce: &[u8], tag: &[u8]) -> bool {
    let mut mac = HmacSha256::new_from_slice(secret).expect("hmac accepts any key length");
    mac.update(nonce);
    mac.verify_slice(tag).is_ok()
}
