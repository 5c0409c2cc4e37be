/** Raw-WebGL mesh viewer: flat-lit triangles, orbit camera, and an
 *  original/stylized/split display driven by two position buffers that share
 *  one index buffer (stylization never changes connectivity). */
import { DisplayMode } from "./controller.js";

const VS = `#version 300 es
in vec3 position;
in vec3 normal;
uniform mat4 viewProj;
uniform mat4 model;
out vec3 vNormal;
out vec3 vPos;
void main() {
  vNormal = normal;
  vPos = position;
  gl_Position = viewProj * model * vec4(position, 1.0);
}`;

const FS = `#version 300 es
precision highp float;
in vec3 vNormal;
in vec3 vPos;
uniform vec3 tint;
out vec4 color;
void main() {
  vec3 n = normalize(vNormal);
  vec3 l1 = normalize(vec3(0.6, 0.7, 0.8));
  vec3 l2 = normalize(vec3(-0.5, -0.2, -0.9));
  float d = 0.55 * max(dot(n, l1), 0.0) + 0.25 * max(dot(n, l2), 0.0) + 0.25;
  color = vec4(tint * d, 1.0);
}`;

function perspective(fovy: number, aspect: number, near: number, far: number): Float32Array {
  const f = 1 / Math.tan(fovy / 2);
  const out = new Float32Array(16);
  out[0] = f / aspect;
  out[5] = f;
  out[10] = (far + near) / (near - far);
  out[11] = -1;
  out[14] = (2 * far * near) / (near - far);
  return out;
}

function lookAt(eye: number[], center: number[], up: number[]): Float32Array {
  const z = norm3(sub3(eye, center));
  const x = norm3(cross3(up, z));
  const y = cross3(z, x);
  const out = new Float32Array(16);
  out.set([x[0], y[0], z[0], 0, x[1], y[1], z[1], 0, x[2], y[2], z[2], 0,
           -dot3(x, eye), -dot3(y, eye), -dot3(z, eye), 1]);
  return out;
}

function mul4(a: Float32Array, b: Float32Array): Float32Array {
  const out = new Float32Array(16);
  for (let r = 0; r < 4; r++)
    for (let c = 0; c < 4; c++) {
      let s = 0;
      for (let k = 0; k < 4; k++) s += a[k * 4 + r] * b[c * 4 + k];
      out[c * 4 + r] = s;
    }
  return out;
}

const sub3 = (a: number[], b: number[]) => [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
const cross3 = (a: number[], b: number[]) => [
  a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]];
const dot3 = (a: number[], b: number[]) => a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
function norm3(a: number[]): number[] {
  const n = Math.hypot(a[0], a[1], a[2]) || 1;
  return [a[0] / n, a[1] / n, a[2] / n];
}

export function computeVertexNormals(positions: Float32Array, triangles: Uint32Array): Float32Array {
  const normals = new Float32Array(positions.length);
  for (let t = 0; t < triangles.length; t += 3) {
    const [a, b, c] = [triangles[t] * 3, triangles[t + 1] * 3, triangles[t + 2] * 3];
    const ux = positions[b] - positions[a], uy = positions[b + 1] - positions[a + 1],
      uz = positions[b + 2] - positions[a + 2];
    const vx = positions[c] - positions[a], vy = positions[c + 1] - positions[a + 1],
      vz = positions[c + 2] - positions[a + 2];
    const nx = uy * vz - uz * vy, ny = uz * vx - ux * vz, nz = ux * vy - uy * vx;
    for (const i of [a, b, c]) {
      normals[i] += nx; normals[i + 1] += ny; normals[i + 2] += nz;
    }
  }
  for (let i = 0; i < normals.length; i += 3) {
    const n = Math.hypot(normals[i], normals[i + 1], normals[i + 2]) || 1;
    normals[i] /= n; normals[i + 1] /= n; normals[i + 2] /= n;
  }
  return normals;
}

interface MeshBuffers {
  position: WebGLBuffer;
  normal: WebGLBuffer;
  vao: WebGLVertexArrayObject;
}

export class Viewer {
  private gl: WebGL2RenderingContext;
  private program: WebGLProgram;
  private index!: WebGLBuffer;
  private original: MeshBuffers | null = null;
  private stylized: MeshBuffers | null = null;
  private triangles: Uint32Array | null = null;
  private nIndices = 0;
  mode: DisplayMode = "stylized";
  private theta = 0.7;
  private phi = 0.8;
  private radius = 3.0;
  private center = [0, 0, 0];

  constructor(private canvas: HTMLCanvasElement) {
    const gl = canvas.getContext("webgl2");
    if (!gl) throw new Error("WebGL2 unavailable");
    this.gl = gl;
    this.program = this.link(VS, FS);
    gl.enable(gl.DEPTH_TEST);
    this.bindOrbit();
  }

  private link(vsSrc: string, fsSrc: string): WebGLProgram {
    const gl = this.gl;
    const compile = (kind: number, src: string) => {
      const shader = gl.createShader(kind)!;
      gl.shaderSource(shader, src);
      gl.compileShader(shader);
      if (!gl.getShaderParameter(shader, gl.COMPILE_STATUS)) {
        throw new Error(gl.getShaderInfoLog(shader) ?? "shader error");
      }
      return shader;
    };
    const program = gl.createProgram()!;
    gl.attachShader(program, compile(gl.VERTEX_SHADER, vsSrc));
    gl.attachShader(program, compile(gl.FRAGMENT_SHADER, fsSrc));
    gl.linkProgram(program);
    if (!gl.getProgramParameter(program, gl.LINK_STATUS)) {
      throw new Error(gl.getProgramInfoLog(program) ?? "link error");
    }
    return program;
  }

  setMesh(positions: Float32Array, triangles: Uint32Array): void {
    const gl = this.gl;
    this.triangles = triangles;
    this.nIndices = triangles.length;
    this.index = gl.createBuffer()!;
    gl.bindBuffer(gl.ELEMENT_ARRAY_BUFFER, this.index);
    gl.bufferData(gl.ELEMENT_ARRAY_BUFFER, triangles, gl.STATIC_DRAW);
    this.original = this.makeBuffers(positions);
    this.stylized = this.makeBuffers(positions);
    // frame the model
    let cx = 0, cy = 0, cz = 0;
    for (let i = 0; i < positions.length; i += 3) {
      cx += positions[i]; cy += positions[i + 1]; cz += positions[i + 2];
    }
    const n = positions.length / 3;
    this.center = [cx / n, cy / n, cz / n];
    let r = 0;
    for (let i = 0; i < positions.length; i += 3) {
      r = Math.max(r, Math.hypot(positions[i] - this.center[0],
                                 positions[i + 1] - this.center[1],
                                 positions[i + 2] - this.center[2]));
    }
    this.radius = Math.max(r * 2.6, 1e-6);
    this.draw();
  }

  updateStylized(positions: Float32Array): void {
    if (!this.stylized || !this.triangles) return;
    const gl = this.gl;
    gl.bindBuffer(gl.ARRAY_BUFFER, this.stylized.position);
    gl.bufferData(gl.ARRAY_BUFFER, positions, gl.DYNAMIC_DRAW);
    gl.bindBuffer(gl.ARRAY_BUFFER, this.stylized.normal);
    gl.bufferData(gl.ARRAY_BUFFER, computeVertexNormals(positions, this.triangles), gl.DYNAMIC_DRAW);
    this.draw();
  }

  setMode(mode: DisplayMode): void {
    this.mode = mode;
    this.draw();
  }

  private makeBuffers(positions: Float32Array): MeshBuffers {
    const gl = this.gl;
    const vao = gl.createVertexArray()!;
    gl.bindVertexArray(vao);
    const position = gl.createBuffer()!;
    gl.bindBuffer(gl.ARRAY_BUFFER, position);
    gl.bufferData(gl.ARRAY_BUFFER, positions, gl.DYNAMIC_DRAW);
    const posLoc = gl.getAttribLocation(this.program, "position");
    gl.enableVertexAttribArray(posLoc);
    gl.vertexAttribPointer(posLoc, 3, gl.FLOAT, false, 0, 0);
    const normal = gl.createBuffer()!;
    gl.bindBuffer(gl.ARRAY_BUFFER, normal);
    gl.bufferData(gl.ARRAY_BUFFER,
                  computeVertexNormals(positions, this.triangles!), gl.DYNAMIC_DRAW);
    const nLoc = gl.getAttribLocation(this.program, "normal");
    gl.enableVertexAttribArray(nLoc);
    gl.vertexAttribPointer(nLoc, 3, gl.FLOAT, false, 0, 0);
    gl.bindBuffer(gl.ELEMENT_ARRAY_BUFFER, this.index);
    gl.bindVertexArray(null);
    return { position, normal, vao };
  }

  private bindOrbit(): void {
    let dragging = false;
    let lastX = 0, lastY = 0;
    this.canvas.addEventListener("pointerdown", (e) => {
      dragging = true; lastX = e.clientX; lastY = e.clientY;
      this.canvas.setPointerCapture(e.pointerId);
    });
    this.canvas.addEventListener("pointermove", (e) => {
      if (!dragging) return;
      this.theta -= (e.clientX - lastX) * 0.008;
      this.phi = Math.min(Math.max(this.phi - (e.clientY - lastY) * 0.008, 0.05), Math.PI - 0.05);
      lastX = e.clientX; lastY = e.clientY;
      this.draw();
    });
    this.canvas.addEventListener("pointerup", () => { dragging = false; });
    this.canvas.addEventListener("wheel", (e) => {
      e.preventDefault();
      this.radius *= Math.exp(e.deltaY * 0.001);
      this.draw();
    }, { passive: false });
  }

  draw(): void {
    const gl = this.gl;
    const w = this.canvas.clientWidth * (window.devicePixelRatio || 1);
    const h = this.canvas.clientHeight * (window.devicePixelRatio || 1);
    if (this.canvas.width !== w || this.canvas.height !== h) {
      this.canvas.width = w;
      this.canvas.height = h;
    }
    gl.clearColor(0.12, 0.13, 0.15, 1);
    gl.clear(gl.COLOR_BUFFER_BIT | gl.DEPTH_BUFFER_BIT);
    if (!this.original || !this.stylized) return;

    const eye = [
      this.center[0] + this.radius * Math.sin(this.phi) * Math.cos(this.theta),
      this.center[1] + this.radius * Math.sin(this.phi) * Math.sin(this.theta),
      this.center[2] + this.radius * Math.cos(this.phi),
    ];
    gl.useProgram(this.program);
    const model = new Float32Array([1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1]);
    gl.uniformMatrix4fv(gl.getUniformLocation(this.program, "model"), false, model);

    const drawOne = (buffers: MeshBuffers, tint: number[], x0: number, width: number) => {
      gl.viewport(x0, 0, width, h);
      gl.enable(gl.SCISSOR_TEST);
      gl.scissor(x0, 0, width, h);
      const proj = perspective(0.9, width / h, this.radius * 0.01, this.radius * 10);
      const view = lookAt(eye, this.center, [0, 0, 1]);
      gl.uniformMatrix4fv(gl.getUniformLocation(this.program, "viewProj"), false,
                          mul4(proj, view));
      gl.uniform3fv(gl.getUniformLocation(this.program, "tint"), tint);
      gl.bindVertexArray(buffers.vao);
      gl.drawElements(gl.TRIANGLES, this.nIndices, gl.UNSIGNED_INT, 0);
      gl.bindVertexArray(null);
      gl.disable(gl.SCISSOR_TEST);
    };

    const gray = [0.75, 0.76, 0.8];
    const blue = [0.45, 0.65, 0.95];
    if (this.mode === "original") {
      drawOne(this.original, gray, 0, w);
    } else if (this.mode === "stylized") {
      drawOne(this.stylized, blue, 0, w);
    } else {
      drawOne(this.original, gray, 0, Math.floor(w / 2));
      drawOne(this.stylized, blue, Math.floor(w / 2), w - Math.floor(w / 2));
    }
  }
}
