const int N = 100;
const int M = 50;
float a[N][M];

//@seq
for (i = 0; i < N; i++) {
  for (j = 0; j < M; j++) {
    a[i][j] = 0.5 * j;
  }
}
