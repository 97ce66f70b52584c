//! AES-128 block modes used by the channel: raw CBC over whole blocks,
//! PKCS#7 padding, and AES-CMAC (NIST SP 800-38B).
//!
//! Only the block permutation comes from the `aes` crate; chaining, padding
//! and the CMAC subkey schedule live here.

use aes::cipher::generic_array::GenericArray;
use aes::cipher::{BlockDecrypt, BlockEncrypt, KeyInit};
use aes::Aes128;

pub const BLOCK_LEN: usize = 16;

pub type Block = [u8; BLOCK_LEN];

/// Length of `data` is not a positive multiple of the block size.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NotBlockAligned(pub usize);

/// Padding bytes did not form a valid PKCS#7 trailer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BadPadding;

fn cipher(key: &Block) -> Aes128 {
    Aes128::new(GenericArray::from_slice(key))
}

fn xor_in_place(dst: &mut [u8], src: &[u8]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d ^= s;
    }
}

fn check_aligned(data: &[u8]) -> Result<(), NotBlockAligned> {
    if data.is_empty() || !data.len().is_multiple_of(BLOCK_LEN) {
        Err(NotBlockAligned(data.len()))
    } else {
        Ok(())
    }
}

/// CBC encryption without padding.
pub fn cbc_encrypt(key: &Block, iv: &Block, data: &[u8]) -> Result<Vec<u8>, NotBlockAligned> {
    check_aligned(data)?;
    let aes = cipher(key);
    let mut out = Vec::with_capacity(data.len());
    let mut chain = *iv;
    for chunk in data.chunks_exact(BLOCK_LEN) {
        xor_in_place(&mut chain, chunk);
        let mut block = GenericArray::from(chain);
        aes.encrypt_block(&mut block);
        chain.copy_from_slice(&block);
        out.extend_from_slice(&chain);
    }
    Ok(out)
}

/// CBC decryption without padding removal.
pub fn cbc_decrypt(key: &Block, iv: &Block, data: &[u8]) -> Result<Vec<u8>, NotBlockAligned> {
    check_aligned(data)?;
    let aes = cipher(key);
    let mut out = Vec::with_capacity(data.len());
    let mut prev: &[u8] = iv;
    for chunk in data.chunks_exact(BLOCK_LEN) {
        let mut block = GenericArray::clone_from_slice(chunk);
        aes.decrypt_block(&mut block);
        xor_in_place(&mut block, prev);
        out.extend_from_slice(&block);
        prev = chunk;
    }
    Ok(out)
}

/// PKCS#7 padding; always appends between 1 and 16 bytes.
pub fn pad(data: &[u8]) -> Vec<u8> {
    let n = BLOCK_LEN - data.len() % BLOCK_LEN;
    let mut out = Vec::with_capacity(data.len() + n);
    out.extend_from_slice(data);
    out.resize(data.len() + n, n as u8);
    out
}

pub fn unpad(data: &[u8]) -> Result<&[u8], BadPadding> {
    if data.is_empty() || !data.len().is_multiple_of(BLOCK_LEN) {
        return Err(BadPadding);
    }
    let n = data[data.len() - 1] as usize;
    if n == 0 || n > BLOCK_LEN {
        return Err(BadPadding);
    }
    let (body, trailer) = data.split_at(data.len() - n);
    if trailer.iter().any(|&b| b as usize != n) {
        return Err(BadPadding);
    }
    Ok(body)
}

// Doubling in GF(2^128) with the 0x87 reduction constant.
fn dbl(block: &Block) -> Block {
    let mut out = [0u8; BLOCK_LEN];
    let mut carry = 0u8;
    for i in (0..BLOCK_LEN).rev() {
        out[i] = (block[i] << 1) | carry;
        carry = block[i] >> 7;
    }
    if carry != 0 {
        out[BLOCK_LEN - 1] ^= 0x87;
    }
    out
}

/// AES-CMAC over an arbitrary-length message.
pub fn cmac(key: &Block, message: &[u8]) -> Block {
    let aes = cipher(key);
    let encrypt = |b: &Block| -> Block {
        let mut ga = GenericArray::from(*b);
        aes.encrypt_block(&mut ga);
        ga.into()
    };
    let l = encrypt(&[0u8; BLOCK_LEN]);
    let k1 = dbl(&l);
    let k2 = dbl(&k1);

    let full_last = !message.is_empty() && message.len().is_multiple_of(BLOCK_LEN);
    let n_blocks = if message.is_empty() {
        1
    } else {
        message.len().div_ceil(BLOCK_LEN)
    };
    let (head, tail) = message.split_at((n_blocks - 1) * BLOCK_LEN);

    let mut last = [0u8; BLOCK_LEN];
    if full_last {
        last.copy_from_slice(tail);
        xor_in_place(&mut last, &k1);
    } else {
        last[..tail.len()].copy_from_slice(tail);
        last[tail.len()] = 0x80;
        xor_in_place(&mut last, &k2);
    }

    let mut x = [0u8; BLOCK_LEN];
    for chunk in head.chunks_exact(BLOCK_LEN) {
        xor_in_place(&mut x, chunk);
        x = encrypt(&x);
    }
    xor_in_place(&mut x, &last);
    encrypt(&x)
}

/// Equality check whose running time does not depend on where inputs differ.
pub fn ct_eq(a: &[u8], b: &[u8]) -> bool {
    if a.len() != b.len() {
        return false;
    }
    a.iter().zip(b).fold(0u8, |acc, (x, y)| acc | (x ^ y)) == 0
}
