// Himeno-style Poisson solver kernel: initialization, one Jacobi sweep and
// the copy back. Sizes follow the benchmark's M grid.
#define MIMAX 257
#define MJMAX 129
#define MKMAX 129

float p[MIMAX][MJMAX][MKMAX];
float a[4][MIMAX][MJMAX][MKMAX];
float b[3][MIMAX][MJMAX][MKMAX];
float c[3][MIMAX][MJMAX][MKMAX];
float bnd[MIMAX][MJMAX][MKMAX];
float wrk1[MIMAX][MJMAX][MKMAX];
float wrk2[MIMAX][MJMAX][MKMAX];
float omega[4];

for (i = 0; i < MIMAX; i++) {
  for (j = 0; j < MJMAX; j++) {
    for (k = 0; k < MKMAX; k++) {
      p[i][j][k] = (i * i) / ((MIMAX - 1.0) * (MIMAX - 1.0));
    }
  }
}

for (i = 0; i < MIMAX; i++) {
  for (j = 0; j < MJMAX; j++) {
    for (k = 0; k < MKMAX; k++) {
      a[0][i][j][k] = 1.0;
      a[1][i][j][k] = 1.0;
      a[2][i][j][k] = 1.0;
      a[3][i][j][k] = 1.0 / 6.0;
      b[0][i][j][k] = 0.0;
      b[1][i][j][k] = 0.0;
      b[2][i][j][k] = 0.0;
      c[0][i][j][k] = 1.0;
      c[1][i][j][k] = 1.0;
      c[2][i][j][k] = 1.0;
      bnd[i][j][k] = 1.0;
      wrk1[i][j][k] = 0.0;
      wrk2[i][j][k] = 0.0;
    }
  }
}

for (l = 0; l < 4; l++) {
  omega[l] = omega[l] * 0.8;
}

for (i = 1; i < MIMAX - 1; i++) {
  for (j = 1; j < MJMAX - 1; j++) {
    for (k = 1; k < MKMAX - 1; k++) {
      wrk2[i][j][k] = p[i][j][k] + omega[0] * bnd[i][j][k] *
        ((a[0][i][j][k] * p[i + 1][j][k] + a[1][i][j][k] * p[i][j + 1][k]
          + a[2][i][j][k] * p[i][j][k + 1]
          + b[0][i][j][k] * (p[i + 1][j + 1][k] - p[i + 1][j - 1][k] - p[i - 1][j + 1][k] + p[i - 1][j - 1][k])
          + b[1][i][j][k] * (p[i][j + 1][k + 1] - p[i][j - 1][k + 1] - p[i][j + 1][k - 1] + p[i][j - 1][k - 1])
          + b[2][i][j][k] * (p[i + 1][j][k + 1] - p[i - 1][j][k + 1] - p[i + 1][j][k - 1] + p[i - 1][j][k - 1])
          + c[0][i][j][k] * p[i - 1][j][k] + c[1][i][j][k] * p[i][j - 1][k]
          + c[2][i][j][k] * p[i][j][k - 1] + wrk1[i][j][k]) * a[3][i][j][k] - p[i][j][k]);
    }
  }
}

for (i = 1; i < MIMAX - 1; i++) {
  for (j = 1; j < MJMAX - 1; j++) {
    for (k = 1; k < MKMAX - 1; k++) {
      p[i][j][k] = wrk2[i][j][k];
    }
  }
}
