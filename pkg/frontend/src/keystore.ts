// In-browser key material. Accounts are derived from a key phrase the user
// types locally; the gateway only ever sees addresses, public keys and
// signatures. Derivation mirrors the backend exactly, so the same phrase
// yields the same address on both sides.

import { ed25519, x25519 } from '@noble/curves/ed25519.js';
import { sha256 } from '@noble/hashes/sha2.js';
import { hkdf } from '@noble/hashes/hkdf.js';
import { gcm } from '@noble/ciphers/aes.js';
import {
  bytesToHex,
  hexToBytes,
  concatBytes,
  utf8ToBytes,
  randomBytes,
} from '@noble/hashes/utils.js';

export { bytesToHex, hexToBytes, utf8ToBytes };

const SIGN_DOMAIN = utf8ToBytes('medledger/sign:');
const ENCRYPT_DOMAIN = utf8ToBytes('medledger/encrypt:');
const LOGIN_DOMAIN = utf8ToBytes('medledger/login:');
const WRAP_INFO = utf8ToBytes('medledger/record-key-wrap');

export interface Identity {
  address: string;
  publicKeyHex: string;
  encPublicKeyHex: string;
  // Private scalars. These stay inside the page; nothing below ever puts
  // them into a request body, only signatures derived from them.
  signingKey: Uint8Array;
  encKey: Uint8Array;
}

export function deriveIdentity(phrase: string): Identity {
  const seed = utf8ToBytes(phrase);
  const signingKey = sha256(concatBytes(SIGN_DOMAIN, seed));
  const encKey = sha256(concatBytes(ENCRYPT_DOMAIN, seed));
  const publicKey = ed25519.getPublicKey(signingKey);
  return {
    address: bytesToHex(sha256(publicKey).slice(12)),
    publicKeyHex: bytesToHex(publicKey),
    encPublicKeyHex: bytesToHex(x25519.getPublicKey(encKey)),
    signingKey,
    encKey,
  };
}

// Login challenges are domain-separated so a stolen login signature can
// never double as a transaction signature.
export function signLogin(identity: Identity, nonceHex: string): string {
  const message = concatBytes(LOGIN_DOMAIN, hexToBytes(nonceHex));
  return bytesToHex(ed25519.sign(message, identity.signingKey));
}

// The gateway's /tx/prepare returns the exact bytes the node will verify;
// we sign them as-is and hand back only the signature.
export function signPrepared(identity: Identity, signingBytesHex: string): string {
  return bytesToHex(ed25519.sign(hexToBytes(signingBytesHex), identity.signingKey));
}

export interface WrappedKeyJson {
  grantee_enc_public_key: string;
  ephemeral_public_key: string;
  nonce: string;
  wrapped: string;
}

export interface SealedRecordJson {
  ciphertext: string;
  nonce: string;
  wrapped_keys: Record<string, WrappedKeyJson>;
}

export interface Reader {
  address: string;
  encPublicKeyHex: string;
}

function wrapKey(recordKey: Uint8Array, granteeEncPublic: Uint8Array): WrappedKeyJson {
  const ephemeral = randomBytes(32);
  const ephemeralPublic = x25519.getPublicKey(ephemeral);
  const shared = x25519.getSharedSecret(ephemeral, granteeEncPublic);
  const kek = hkdf(
    sha256,
    concatBytes(shared, ephemeralPublic, granteeEncPublic),
    undefined,
    WRAP_INFO,
    32,
  );
  const nonce = randomBytes(12);
  return {
    grantee_enc_public_key: bytesToHex(granteeEncPublic),
    ephemeral_public_key: bytesToHex(ephemeralPublic),
    nonce: bytesToHex(nonce),
    wrapped: bytesToHex(gcm(kek, nonce).encrypt(recordKey)),
  };
}

// Envelope encryption compatible with the backend: AES-GCM under a fresh
// record key, the record key wrapped per reader via X25519 + HKDF-SHA256.
export function sealRecord(plaintext: Uint8Array, readers: Reader[]): SealedRecordJson {
  const recordKey = randomBytes(32);
  const nonce = randomBytes(12);
  const wrappedKeys: Record<string, WrappedKeyJson> = {};
  for (const reader of readers) {
    wrappedKeys[reader.address] = wrapKey(recordKey, hexToBytes(reader.encPublicKeyHex));
  }
  return {
    ciphertext: bytesToHex(gcm(recordKey, nonce).encrypt(plaintext)),
    nonce: bytesToHex(nonce),
    wrapped_keys: wrappedKeys,
  };
}
