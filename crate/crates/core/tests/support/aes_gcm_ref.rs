//! Reference AES-256-GCM, written from the spec (FIPS 197 + SP 800-38D),
//! independent of the aead crate the library links. Test oracle only:
//! table-based, unhardened, and unconcerned with timing.

const SBOX: [u8; 256] = [
    0x63, 0x7c, 0x77, 0x7b, 0xf2, 0x6b, 0x6f, 0xc5, 0x30, 0x01, 0x67, 0x2b, 0xfe, 0xd7, 0xab,
    0x76, 0xca, 0x82, 0xc9, 0x7d, 0xfa, 0x59, 0x47, 0xf0, 0xad, 0xd4, 0xa2, 0xaf, 0x9c, 0xa4,
    0x72, 0xc0, 0xb7, 0xfd, 0x93, 0x26, 0x36, 0x3f, 0xf7, 0xcc, 0x34, 0xa5, 0xe5, 0xf1, 0x71,
    0xd8, 0x31, 0x15, 0x04, 0xc7, 0x23, 0xc3, 0x18, 0x96, 0x05, 0x9a, 0x07, 0x12, 0x80, 0xe2,
    0xeb, 0x27, 0xb2, 0x75, 0x09, 0x83, 0x2c, 0x1a, 0x1b, 0x6e, 0x5a, 0xa0, 0x52, 0x3b, 0xd6,
    0xb3, 0x29, 0xe3, 0x2f, 0x84, 0x53, 0xd1, 0x00, 0xed, 0x20, 0xfc, 0xb1, 0x5b, 0x6a, 0xcb,
    0xbe, 0x39, 0x4a, 0x4c, 0x58, 0xcf, 0xd0, 0xef, 0xaa, 0xfb, 0x43, 0x4d, 0x33, 0x85, 0x45,
    0xf9, 0x02, 0x7f, 0x50, 0x3c, 0x9f, 0xa8, 0x51, 0xa3, 0x40, 0x8f, 0x92, 0x9d, 0x38, 0xf5,
    0xbc, 0xb6, 0xda, 0x21, 0x10, 0xff, 0xf3, 0xd2, 0xcd, 0x0c, 0x13, 0xec, 0x5f, 0x97, 0x44,
    0x17, 0xc4, 0xa7, 0x7e, 0x3d, 0x64, 0x5d, 0x19, 0x73, 0x60, 0x81, 0x4f, 0xdc, 0x22, 0x2a,
    0x90, 0x88, 0x46, 0xee, 0xb8, 0x14, 0xde, 0x5e, 0x0b, 0xdb, 0xe0, 0x32, 0x3a, 0x0a, 0x49,
    0x06, 0x24, 0x5c, 0xc2, 0xd3, 0xac, 0x62, 0x91, 0x95, 0xe4, 0x79, 0xe7, 0xc8, 0x37, 0x6d,
    0x8d, 0xd5, 0x4e, 0xa9, 0x6c, 0x56, 0xf4, 0xea, 0x65, 0x7a, 0xae, 0x08, 0xba, 0x78, 0x25,
    0x2e, 0x1c, 0xa6, 0xb4, 0xc6, 0xe8, 0xdd, 0x74, 0x1f, 0x4b, 0xbd, 0x8b, 0x8a, 0x70, 0x3e,
    0xb5, 0x66, 0x48, 0x03, 0xf6, 0x0e, 0x61, 0x35, 0x57, 0xb9, 0x86, 0xc1, 0x1d, 0x9e, 0xe1,
    0xf8, 0x98, 0x11, 0x69, 0xd9, 0x8e, 0x94, 0x9b, 0x1e, 0x87, 0xe9, 0xce, 0x55, 0x28, 0xdf,
    0x8c, 0xa1, 0x89, 0x0d, 0xbf, 0xe6, 0x42, 0x68, 0x41, 0x99, 0x2d, 0x0f, 0xb0, 0x54, 0xbb,
    0x16,
];

const RCON: [u8; 15] = [
    0x01, 0x02, 0x04, 0x08, 0x10, 0x20, 0x40, 0x80, 0x1b, 0x36, 0x6c, 0xd8, 0xab, 0x4d, 0x9a,
];

/// AES-256: 14 rounds, 60-word key schedule.
struct Aes256 {
    round_keys: [[u8; 16]; 15],
}

impl Aes256 {
    fn new(key: &[u8; 32]) -> Self {
        let mut words = [[0u8; 4]; 60];
        for (i, chunk) in key.chunks_exact(4).enumerate() {
            words[i].copy_from_slice(chunk);
        }
        for i in 8..60 {
            let mut temp = words[i - 1];
            if i % 8 == 0 {
                temp.rotate_left(1);
                for b in &mut temp {
                    *b = SBOX[*b as usize];
                }
                temp[0] ^= RCON[i / 8 - 1];
            } else if i % 8 == 4 {
                for b in &mut temp {
                    *b = SBOX[*b as usize];
                }
            }
            for j in 0..4 {
                words[i][j] = words[i - 8][j] ^ temp[j];
            }
        }
        let mut round_keys = [[0u8; 16]; 15];
        for (r, rk) in round_keys.iter_mut().enumerate() {
            for c in 0..4 {
                rk[c * 4..c * 4 + 4].copy_from_slice(&words[r * 4 + c]);
            }
        }
        Self { round_keys }
    }

    fn encrypt_block(&self, block: &[u8; 16]) -> [u8; 16] {
        let mut state = *block;
        xor16(&mut state, &self.round_keys[0]);
        for round in 1..14 {
            sub_bytes(&mut state);
            shift_rows(&mut state);
            mix_columns(&mut state);
            xor16(&mut state, &self.round_keys[round]);
        }
        sub_bytes(&mut state);
        shift_rows(&mut state);
        xor16(&mut state, &self.round_keys[14]);
        state
    }
}

fn xor16(a: &mut [u8; 16], b: &[u8; 16]) {
    for i in 0..16 {
        a[i] ^= b[i];
    }
}

fn sub_bytes(state: &mut [u8; 16]) {
    for b in state.iter_mut() {
        *b = SBOX[*b as usize];
    }
}

fn shift_rows(state: &mut [u8; 16]) {
    // State is column-major: byte (row, col) lives at col*4 + row.
    let s = *state;
    for row in 1..4 {
        for col in 0..4 {
            state[col * 4 + row] = s[((col + row) % 4) * 4 + row];
        }
    }
}

fn xtime(b: u8) -> u8 {
    (b << 1) ^ if b & 0x80 != 0 { 0x1b } else { 0 }
}

fn mix_columns(state: &mut [u8; 16]) {
    for col in 0..4 {
        let a = [
            state[col * 4],
            state[col * 4 + 1],
            state[col * 4 + 2],
            state[col * 4 + 3],
        ];
        state[col * 4] = xtime(a[0]) ^ (xtime(a[1]) ^ a[1]) ^ a[2] ^ a[3];
        state[col * 4 + 1] = a[0] ^ xtime(a[1]) ^ (xtime(a[2]) ^ a[2]) ^ a[3];
        state[col * 4 + 2] = a[0] ^ a[1] ^ xtime(a[2]) ^ (xtime(a[3]) ^ a[3]);
        state[col * 4 + 3] = (xtime(a[0]) ^ a[0]) ^ a[1] ^ a[2] ^ xtime(a[3]);
    }
}

/// GF(2^128) multiplication per SP 800-38D, bits MSB-first.
fn ghash_mul(x: u128, y: u128) -> u128 {
    const R: u128 = 0xe1 << 120;
    let mut z: u128 = 0;
    let mut v = y;
    for i in 0..128 {
        if (x >> (127 - i)) & 1 == 1 {
            z ^= v;
        }
        let lsb = v & 1;
        v >>= 1;
        if lsb == 1 {
            v ^= R;
        }
    }
    z
}

fn ghash(h: u128, aad: &[u8], ct: &[u8]) -> u128 {
    let mut y: u128 = 0;
    let mut absorb = |data: &[u8], y: &mut u128| {
        for block in data.chunks(16) {
            let mut padded = [0u8; 16];
            padded[..block.len()].copy_from_slice(block);
            *y = ghash_mul(*y ^ u128::from_be_bytes(padded), h);
        }
    };
    absorb(aad, &mut y);
    absorb(ct, &mut y);
    let lengths = ((aad.len() as u128 * 8) << 64) | (ct.len() as u128 * 8);
    ghash_mul(y ^ lengths, h)
}

/// AES-256-GCM seal with a 96-bit nonce. Returns (ciphertext, tag).
pub fn seal(key: &[u8; 32], nonce: &[u8; 12], aad: &[u8], plaintext: &[u8]) -> (Vec<u8>, [u8; 16]) {
    let aes = Aes256::new(key);
    let h = u128::from_be_bytes(aes.encrypt_block(&[0u8; 16]));

    let mut counter_block = [0u8; 16];
    counter_block[..12].copy_from_slice(nonce);
    counter_block[15] = 1;
    let j0 = counter_block;

    let mut ciphertext = Vec::with_capacity(plaintext.len());
    let mut counter = u32::from_be_bytes([j0[12], j0[13], j0[14], j0[15]]);
    for block in plaintext.chunks(16) {
        counter = counter.wrapping_add(1);
        let mut cb = j0;
        cb[12..16].copy_from_slice(&counter.to_be_bytes());
        let keystream = aes.encrypt_block(&cb);
        for (i, b) in block.iter().enumerate() {
            ciphertext.push(b ^ keystream[i]);
        }
    }

    let s = ghash(h, aad, &ciphertext);
    let tag_mask = u128::from_be_bytes(aes.encrypt_block(&j0));
    let tag = (s ^ tag_mask).to_be_bytes();
    (ciphertext, tag)
}

/// AES-256-GCM open; `None` when the tag does not verify.
pub fn open(
    key: &[u8; 32],
    nonce: &[u8; 12],
    aad: &[u8],
    ciphertext: &[u8],
    tag: &[u8; 16],
) -> Option<Vec<u8>> {
    let aes = Aes256::new(key);
    let h = u128::from_be_bytes(aes.encrypt_block(&[0u8; 16]));
    let mut j0 = [0u8; 16];
    j0[..12].copy_from_slice(nonce);
    j0[15] = 1;

    let s = ghash(h, aad, ciphertext);
    let expected = (s ^ u128::from_be_bytes(aes.encrypt_block(&j0))).to_be_bytes();
    if &expected != tag {
        return None;
    }

    let mut plaintext = Vec::with_capacity(ciphertext.len());
    let mut counter = u32::from_be_bytes([j0[12], j0[13], j0[14], j0[15]]);
    for block in ciphertext.chunks(16) {
        counter = counter.wrapping_add(1);
        let mut cb = j0;
        cb[12..16].copy_from_slice(&counter.to_be_bytes());
        let keystream = aes.encrypt_block(&cb);
        for (i, b) in block.iter().enumerate() {
            plaintext.push(b ^ keystream[i]);
        }
    }
    Some(plaintext)
}

/// Known-answer self-check: SP 800-38D AES-256-GCM test case with AAD.
pub fn self_test() {
    let key: [u8; 32] =
        hex_arr("feffe9928665731c6d6a8f9467308308feffe9928665731c6d6a8f9467308308");
    let nonce: [u8; 12] = hex_arr("cafebabefacedbaddecaf888");
    let plaintext = hex_vec(
        "d9313225f88406e5a55909c5aff5269a86a7a9531534f7da2e4c303d8a318a72\
         1c3c0c95956809532fcf0e2449a6b525b16aedf5aa0de657ba637b39",
    );
    let aad = hex_vec("feedfacedeadbeeffeedfacedeadbeefabaddad2");
    let expected_ct = hex_vec(
        "522dc1f099567d07f47f37a32a84427d643a8cdcbfe5c0c97598a2bd2555d1aa\
         8cb08e48590dbb3da7b08b1056828838c5f61e6393ba7a0abcc9f662",
    );
    let expected_tag: [u8; 16] = hex_arr("76fc6ece0f4e1768cddf8853bb2d551b");

    let (ct, tag) = seal(&key, &nonce, &aad, &plaintext);
    assert_eq!(ct, expected_ct, "reference AES-GCM ciphertext mismatch");
    assert_eq!(tag, expected_tag, "reference AES-GCM tag mismatch");
    assert_eq!(
        open(&key, &nonce, &aad, &ct, &tag).as_deref(),
        Some(plaintext.as_slice())
    );
}

fn hex_vec(s: &str) -> Vec<u8> {
    let s: String = s.chars().filter(|c| !c.is_whitespace()).collect();
    (0..s.len())
        .step_by(2)
        .map(|i| u8::from_str_radix(&s[i..i + 2], 16).expect("hex"))
        .collect()
}

fn hex_arr<const N: usize>(s: &str) -> [u8; N] {
    hex_vec(s).try_into().expect("length")
}
