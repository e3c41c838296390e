import * as fs from 'fs'
import * as tf from '@tensorflow/tfjs'
import { PNG } from 'pngjs'

/** Decode an 8-bit PNG into a [H, W, 3] float32 tensor in [0, 1]. */
export function loadPng(path: string): tf.Tensor3D {
  const png = PNG.sync.read(fs.readFileSync(path))
  const { width, height, data } = png
  const out = new Float32Array(height * width * 3)
  for (let i = 0; i < height * width; i++) {
    out[i * 3] = data[i * 4] / 255
    out[i * 3 + 1] = data[i * 4 + 1] / 255
    out[i * 3 + 2] = data[i * 4 + 2] / 255
  }
  return tf.tensor3d(out, [height, width, 3])
}

/** Resize so the longer side equals `longSide`, keeping the aspect ratio. */
export function resizeLongSide(img: tf.Tensor3D, longSide: number): tf.Tensor3D {
  const [h, w] = img.shape
  if (Math.max(h, w) === longSide) {
    return img
  }
  const scale = longSide / Math.max(h, w)
  const outH = Math.max(1, Math.round(h * scale))
  const outW = Math.max(1, Math.round(w * scale))
  return tf.image.resizeBilinear(img, [outH, outW])
}
