/* Triplex sensor mid-value selection, mean-distance variant. */
#include <math.h>

float ia;
float ib;
float ic;
float sel_val;

void MEDSEL_initialize(void)
{
  ia = 0.0F;
  ib = 0.0F;
  ic = 0.0F;
  sel_val = 0.0F;
}

void MEDSEL_step(void)
{
  float mu;
  float d_a;
  float d_b;
  float d_c;
  mu = (ia + ib + ic) / 3.0F;
  d_a = fabsf(ia - mu);
  d_b = fabsf(ib - mu);
  d_c = fabsf(ic - mu);
  sel_val = ia;
  if (d_b < d_a) {
    sel_val = ib;
    d_a = d_b;
  }
  if (d_c < d_a) {
    sel_val = ic;
  }
}
