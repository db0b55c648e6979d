// File-download seam. Browsers get a real download via an object URL; the
// log keeps every artifact so tests (and the data tab) can inspect what was
// produced without touching the filesystem.

export interface CapturedDownload {
  filename: string;
  mime: string;
  bytes: Uint8Array;
}

export const downloadLog: CapturedDownload[] = [];

export function saveFile(bytes: Uint8Array, filename: string, mime: string): void {
  downloadLog.push({ filename, mime, bytes });
  if (typeof URL.createObjectURL !== 'function') return; // non-browser host
  const blob = new Blob([bytes.buffer as ArrayBuffer], { type: mime });
  const url = URL.createObjectURL(blob);
  const anchor = document.createElement('a');
  anchor.href = url;
  anchor.download = filename;
  anchor.click();
  URL.revokeObjectURL(url);
}
